//! Likelihood-based and empirical estimators.

mod empirical;
mod likelihood;
mod optimize;

pub use empirical::{empirical_fit, empirical_rk, fit_ratios, hybrid_select};
pub use likelihood::{
    evaluate_mle, evaluate_mle_stream, evaluate_pmle, hessian, loglik, pseudo_hessian, pseudo_loglik, pseudo_score,
    score, Eval, MleData, PmleData,
};
pub use optimize::{maximize, FitResult, NewtonOptions, BOUNDARY_EPS};

use crate::error::Result;
use crate::model::PaFamily;
use crate::tree::{DegreeSnapshot, GrowthHistory};

/// Default start: the empirical estimate when it exists, else the box center.
fn default_init(family: &PaFamily, snapshot: &DegreeSnapshot) -> Vec<f64> {
    empirical_fit(family, snapshot).unwrap_or_else(|_| family.bounds().center())
}

/// Maximum likelihood estimate from a full history.
pub fn fit_mle(family: &PaFamily, history: &GrowthHistory, init: Option<&[f64]>) -> Result<FitResult> {
    fit_mle_data(family, &MleData::new(history), history, init, NewtonOptions::default())
}

pub fn fit_mle_data(
    family: &PaFamily,
    data: &MleData,
    history: &GrowthHistory,
    init: Option<&[f64]>,
    opts: NewtonOptions,
) -> Result<FitResult> {
    let start = match init {
        Some(t) => t.to_vec(),
        None => default_init(family, &crate::tree::snapshot_of(history)?),
    };
    maximize(family.bounds(), &start, opts, |theta, order| {
        evaluate_mle(family, theta, data, order)
    })
}

/// Pseudo maximum likelihood estimate from a final snapshot.
pub fn fit_pmle(family: &PaFamily, snapshot: &DegreeSnapshot, init: Option<&[f64]>) -> Result<FitResult> {
    let data = PmleData::new(snapshot);
    let start = match init {
        Some(t) => t.to_vec(),
        None => default_init(family, snapshot),
    };
    maximize(family.bounds(), &start, NewtonOptions::default(), |theta, order| {
        evaluate_pmle(family, theta, &data, order)
    })
}

/// Maximum likelihood by running Newton from each candidate start and
/// choosing among the converged roots with [`hybrid_select`].
pub fn fit_mle_hybrid(family: &PaFamily, history: &GrowthHistory, starts: &[Vec<f64>]) -> Result<FitResult> {
    let data = MleData::new(history);
    let snapshot = crate::tree::snapshot_of(history)?;
    let fits: Vec<FitResult> = starts
        .iter()
        .filter_map(|s| fit_mle_data(family, &data, history, Some(s), NewtonOptions::default()).ok())
        .collect();
    if fits.is_empty() {
        return fit_mle_data(family, &data, history, None, NewtonOptions::default());
    }
    let roots: Vec<Vec<f64>> = fits.iter().map(|f| f.theta_hat.clone()).collect();
    let pick = hybrid_select(family, &roots, &snapshot)?;
    Ok(fits
        .into_iter()
        .find(|f| f.theta_hat == pick)
        .expect("selected root comes from the list"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamBox;

    fn pure_power() -> PaFamily {
        PaFamily::power_offset()
            .with_bounds(ParamBox::new(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap())
            .unwrap()
    }

    #[test]
    fn three_node_trees_hit_the_bounds() {
        let fam = pure_power();
        let up = fit_mle(&fam, &GrowthHistory::new(3, vec![1, 2]).unwrap(), None).unwrap();
        assert_eq!(up.theta_hat[1], 1.0);
        assert!(up.at_boundary[1] && up.converged);
        let down = fit_mle(&fam, &GrowthHistory::new(3, vec![1, 1]).unwrap(), None).unwrap();
        assert_eq!(down.theta_hat[1], 0.0);
        assert!(down.at_boundary[1]);
    }

    #[test]
    fn fit_result_text() {
        let fam = pure_power();
        let r = fit_mle(&fam, &GrowthHistory::new(3, vec![1, 2]).unwrap(), None).unwrap();
        assert!(r.report().contains("converged   = true"));
        assert_eq!(
            FitResult::csv_header(2).split(',').count(),
            r.csv_row().split(',').count()
        );
    }
}
