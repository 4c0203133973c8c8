//! Monte Carlo studies: estimator accuracy, the affinity test, bootstrap
//! coverage and normalized bootstrap projections.
//!
//! Replicate `r` always draws from stream `r` of the master seed and results
//! are collected in replicate order, so output does not depend on the number
//! of worker threads.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PaError, Result};
use crate::estimate::{empirical_fit, fit_mle, fit_pmle};
use crate::inference::{asymptotic_info, bootstrap_variance, bootstrap_wald, wald_affinity, WaldReport};
use crate::model::PaFamily;
use crate::rng::{derive_seed, replicate_rng};
use crate::stats;
use crate::tree::{grow_with, GrowOptions, GrownTree};

/// Failed-fit share above which a run is flagged.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Mle,
    Pmle,
    Ee,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mle => "mle",
            Estimator::Pmle => "pmle",
            Estimator::Ee => "ee",
        }
    }

    /// Fits one tree. `None` when the fit errors out or does not converge.
    pub fn fit(self, family: &PaFamily, tree: &GrownTree) -> Option<Vec<f64>> {
        match self {
            Estimator::Mle => fit_mle(family, &tree.history, None)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.theta_hat),
            Estimator::Pmle => fit_pmle(family, &tree.snapshot, None)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.theta_hat),
            Estimator::Ee => empirical_fit(family, &tree.snapshot).ok(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = PaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(Estimator::Mle),
            "pmle" => Ok(Estimator::Pmle),
            "ee" | "empirical" => Ok(Estimator::Ee),
            other => Err(PaError::parse(format!("unknown estimator {other:?} (mle, pmle, ee)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub family: PaFamily,
    pub theta0: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Attach `V0^{-1}` to the reports when it can be computed.
    pub with_reference: bool,
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub family: String,
    pub estimator: Estimator,
    pub theta0: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    /// `(1/N) sum (theta_i - theta0)` over successful fits.
    pub sample_mean_diff: DVector<f64>,
    /// `(n/N) sum (theta_i - theta0)(theta_i - theta0)^T` over successful fits.
    pub rescaled_cov: DMatrix<f64>,
    pub reference: Option<DMatrix<f64>>,
    /// Per replicate, in replicate order; `None` marks a failed fit.
    pub estimates: Vec<Option<Vec<f64>>>,
    pub failures: usize,
    pub failed: bool,
}

/// Sample mean difference and rescaled covariance about `theta0`.
pub fn mc_statistics(theta0: &[f64], n: usize, estimates: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = theta0.len();
    if estimates.is_empty() {
        return Err(PaError::InsufficientData("no successful replicates".into()));
    }
    if estimates.iter().any(|e| e.len() != d) {
        return Err(PaError::domain("estimate dimension does not match theta0"));
    }
    let big_n = estimates.len() as f64;
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for e in estimates {
        let diff = DVector::from_iterator(d, e.iter().zip(theta0).map(|(a, b)| a - b));
        cov += &diff * diff.transpose();
        mean += diff;
    }
    mean /= big_n;
    cov *= n as f64 / big_n;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

impl McReport {
    pub fn successes(&self) -> Vec<Vec<f64>> {
        self.estimates.iter().flatten().cloned().collect()
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family      = {}", self.family);
        let _ = writeln!(out, "estimator   = {}", self.estimator);
        let _ = writeln!(out, "theta0      = {:?}", self.theta0);
        let _ = writeln!(out, "n           = {}", self.n);
        let _ = writeln!(out, "replicates  = {} ({} failed)", self.reps, self.failures);
        if self.failures > 0 {
            let _ = writeln!(out, "warning: {} failed fits excluded", self.failures);
        }
        if self.failed {
            let _ = writeln!(
                out,
                "status      = FAILED (failure rate above {:.0}%)",
                MAX_FAILURE_RATE * 100.0
            );
        }
        let md: Vec<String> = self.sample_mean_diff.iter().map(|v| format!("{v:.3e}")).collect();
        let _ = writeln!(out, "mean_diff   = [{}]", md.join(", "));
        out.push_str(&matrix_block("rescaled_cov", &self.rescaled_cov));
        if let Some(r) = &self.reference {
            out.push_str(&matrix_block("V0_inverse", r));
        }
        out
    }

    /// One row per replicate: index, ok flag, estimate coordinates.
    pub fn estimates_csv(&self) -> String {
        let d = self.theta0.len();
        let mut out = String::from("replicate,estimator,ok");
        for i in 0..d {
            let _ = write!(out, ",theta{i}");
        }
        out.push('\n');
        for (r, e) in self.estimates.iter().enumerate() {
            let _ = write!(out, "{r},{},{}", self.estimator, e.is_some());
            match e {
                Some(v) => v.iter().for_each(|x| {
                    let _ = write!(out, ",{x:?}");
                }),
                None => (0..d).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        out
    }

    /// Summary statistics as `name,i,j,value` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.sample_mean_diff.iter().enumerate() {
            let _ = writeln!(out, "{},mean_diff,{i},,{v:?}", self.estimator);
        }
        for (name, m) in [
            ("rescaled_cov", Some(&self.rescaled_cov)),
            ("v0_inverse", self.reference.as_ref()),
        ] {
            if let Some(m) = m {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let _ = writeln!(out, "{},{name},{i},{j},{:?}", self.estimator, m[(i, j)]);
                    }
                }
            }
        }
        let _ = writeln!(out, "{},failures,,,{}", self.estimator, self.failures);
        out
    }
}

fn matrix_block(name: &str, m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.4}", m[(i, j)])).collect();
        let label = if i == 0 { name } else { "" };
        let _ = writeln!(
            out,
            "{label:<12}{}[{}]",
            if i == 0 { "= " } else { "  " },
            row.join(", ")
        );
    }
    out
}

fn grow_replicate(family: &PaFamily, theta: &[f64], n: usize, seed: u64, r: usize) -> Result<GrownTree> {
    let mut rng = replicate_rng(seed, r as u64);
    grow_with(family, theta, n, &mut rng, GrowOptions::default())
}

/// Grows `reps` trees under `theta0` and fits every requested estimator on
/// each. Returns one report per estimator, in the order requested.
pub fn run_mc(cfg: &McConfig) -> Result<Vec<McReport>> {
    cfg.family.check_theta(&cfg.theta0)?;
    if cfg.reps == 0 || cfg.n < 3 {
        return Err(PaError::domain("need reps >= 1 and n >= 3"));
    }
    if cfg.estimators.is_empty() {
        return Err(PaError::domain("no estimators requested"));
    }
    let rows: Vec<Vec<Option<Vec<f64>>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let tree = grow_replicate(&cfg.family, &cfg.theta0, cfg.n, cfg.seed, r)?;
            Ok(cfg.estimators.iter().map(|e| e.fit(&cfg.family, &tree)).collect())
        })
        .collect::<Result<_>>()?;
    let reference = if cfg.with_reference {
        match asymptotic_info(&cfg.family, &cfg.theta0) {
            Ok(info) => Some(info.v0_inv),
            Err(e) => {
                log::warn!("no reference covariance: {e}");
                None
            }
        }
    } else {
        None
    };
    cfg.estimators
        .iter()
        .enumerate()
        .map(|(col, &est)| {
            let estimates: Vec<Option<Vec<f64>>> = rows.iter().map(|row| row[col].clone()).collect();
            let ok: Vec<Vec<f64>> = estimates.iter().flatten().cloned().collect();
            let failures = cfg.reps - ok.len();
            if failures > 0 {
                log::warn!("{est}: {failures} of {} fits failed and were excluded", cfg.reps);
            }
            let (mean, cov) = mc_statistics(&cfg.theta0, cfg.n, &ok)?;
            Ok(McReport {
                family: cfg.family.kind().to_string(),
                estimator: est,
                theta0: cfg.theta0.clone(),
                n: cfg.n,
                reps: cfg.reps,
                sample_mean_diff: mean,
                rescaled_cov: cov,
                reference: reference.clone(),
                estimates,
                failures,
                failed: failures as f64 > MAX_FAILURE_RATE * cfg.reps as f64,
            })
        })
        .collect()
}

/// QQ table: sorted `(x - center) / scale` against `Phi^{-1}((i - 1/2)/N)`.
pub fn emit_qq(values: &[f64], center: f64, scale: f64) -> Result<Vec<(f64, f64)>> {
    if values.len() < 10 {
        return Err(PaError::InsufficientData(
            "need at least 10 values for a QQ table".into(),
        ));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PaError::domain("scale must be positive"));
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - center) / scale).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(PaError::domain("non-finite value"));
    }
    z.sort_by(f64::total_cmp);
    if z[0] == z[z.len() - 1] {
        return Err(PaError::Degenerate("all values are equal".into()));
    }
    let normal = Normal::standard();
    let big_n = z.len() as f64;
    Ok(z.into_iter()
        .enumerate()
        .map(|(i, v)| (normal.inverse_cdf((i as f64 + 0.5) / big_n), v))
        .collect())
}

/// Correlation between the theoretical and sample quantiles of a QQ table.
pub fn qq_correlation(table: &[(f64, f64)]) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = table.iter().copied().unzip();
    stats::pearson(&x, &y)
}

pub fn qq_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("normal_quantile,sample_quantile\n");
    for (q, v) in table {
        let _ = writeln!(out, "{q:?},{v:?}");
    }
    out
}

#[derive(Debug, Clone)]
pub struct WaldConfig {
    pub theta0: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub size: f64,
}

#[derive(Debug, Clone)]
pub struct WaldExperiment {
    pub reps: usize,
    pub rejections: usize,
    pub failures: usize,
    /// Rejections over successful replicates.
    pub proportion: f64,
    pub tests: Vec<Option<WaldReport>>,
}

impl WaldExperiment {
    pub fn report(&self) -> String {
        format!(
            "replicates = {}\nfailures   = {}\nrejections = {}\nproportion = {:.4}\n",
            self.reps, self.failures, self.rejections, self.proportion
        )
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("replicate,ok,statistic,critical_value,reject,variance_entry\n");
        for (r, t) in self.tests.iter().enumerate() {
            match t {
                Some(t) => {
                    let _ = writeln!(out, "{r},true,{}", t.csv_row());
                }
                None => {
                    let _ = writeln!(out, "{r},false,,,,");
                }
            }
        }
        out
    }
}

fn summarize_tests(tests: Vec<Option<WaldReport>>) -> WaldExperiment {
    let reps = tests.len();
    let ok = tests.iter().flatten().count();
    let rejections = tests.iter().flatten().filter(|t| t.reject).count();
    WaldExperiment {
        reps,
        rejections,
        failures: reps - ok,
        proportion: if ok > 0 {
            rejections as f64 / ok as f64
        } else {
            f64::NAN
        },
        tests,
    }
}

/// Repeats the affinity test on trees grown under `(k + alpha0)^beta0`,
/// fitting the unrestricted maximum likelihood estimate each time.
pub fn run_wald_experiment(cfg: &WaldConfig) -> Result<WaldExperiment> {
    let family = PaFamily::power_offset();
    family.check_theta(&cfg.theta0)?;
    let tests: Vec<Option<WaldReport>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let tree = grow_replicate(&family, &cfg.theta0, cfg.n, cfg.seed, r)?;
            let Some(theta) = Estimator::Mle.fit(&family, &tree) else {
                return Ok(None);
            };
            Ok(wald_affinity(&family, theta[0], theta[1], cfg.n, cfg.size).ok())
        })
        .collect::<Result<_>>()?;
    let out = summarize_tests(tests);
    if out.failures > 0 {
        log::warn!("wald: {} of {} replicates failed", out.failures, out.reps);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BootstrapCoverageConfig {
    pub family: PaFamily,
    pub theta0: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub reps: usize,
    pub seed: u64,
    pub size: f64,
}

/// For each coordinate `c`: tests `theta_c = theta0_c` with the bootstrap
/// variance simulated under the pseudo-likelihood estimate with coordinate
/// `c` replaced by its null value.
pub fn run_bootstrap_coverage(cfg: &BootstrapCoverageConfig) -> Result<Vec<WaldExperiment>> {
    cfg.family.check_theta(&cfg.theta0)?;
    let d = cfg.family.dim();
    let rows: Vec<Vec<Option<WaldReport>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let tree = grow_replicate(&cfg.family, &cfg.theta0, cfg.n, cfg.seed, r)?;
            let Some(tilde) = Estimator::Pmle.fit(&cfg.family, &tree) else {
                return Ok(vec![None; d]);
            };
            Ok((0..d)
                .map(|c| {
                    let mut plug = tilde.clone();
                    plug[c] = cfg.theta0[c];
                    let boot_seed = derive_seed(cfg.seed, &[r as u64, c as u64]);
                    let boot = bootstrap_variance(&cfg.family, &plug, cfg.m, cfg.s, boot_seed).ok()?;
                    bootstrap_wald(&tilde, &boot.sigma_tilde, c, cfg.theta0[c], cfg.n, cfg.size).ok()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..d)
        .map(|c| summarize_tests(rows.iter().map(|row| row[c].clone()).collect()))
        .collect())
}

/// How the normalized projection is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    /// `sqrt(n) Sigma^{-1/2} (theta_tilde - theta0)`.
    Theta0,
    /// `sqrt(n) Sigma^{-1/2} theta_tilde`, without centering.
    Literal,
}

impl FromStr for Centering {
    type Err = PaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "theta0" => Ok(Centering::Theta0),
            "literal" | "none" => Ok(Centering::Literal),
            other => Err(PaError::parse(format!("unknown centering {other:?} (theta0, literal)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionConfig {
    pub family: PaFamily,
    pub theta0: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub reps: usize,
    pub seed: u64,
    pub centering: Centering,
}

/// `M^{-1/2}` for symmetric `M`, with eigenvalues floored at `1e-12`.
/// `None` when `M` has a non-positive eigenvalue.
pub fn inverse_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(1e-12).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Draws `d = u^T sqrt(n) Sigma^{-1/2} (theta_tilde - center)` per replicate,
/// with `u` uniform on the unit sphere. Dropped replicates are `None`.
pub fn run_projected_bootstrap(cfg: &ProjectionConfig) -> Result<Vec<Option<f64>>> {
    cfg.family.check_theta(&cfg.theta0)?;
    let d = cfg.family.dim();
    (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let tree = grow_replicate(&cfg.family, &cfg.theta0, cfg.n, cfg.seed, r)?;
            let Some(tilde) = Estimator::Pmle.fit(&cfg.family, &tree) else {
                return Ok(None);
            };
            let boot_seed = derive_seed(cfg.seed, &[r as u64]);
            let Ok(boot) = bootstrap_variance(&cfg.family, &tilde, cfg.m, cfg.s, boot_seed) else {
                return Ok(None);
            };
            let Some(root) = inverse_sqrt(&boot.sigma_tilde) else {
                return Ok(None);
            };
            let center: Vec<f64> = match cfg.centering {
                Centering::Theta0 => cfg.theta0.clone(),
                Centering::Literal => vec![0.0; d],
            };
            let diff = DVector::from_iterator(d, tilde.iter().zip(&center).map(|(a, b)| a - b));
            let z = root * diff * (cfg.n as f64).sqrt();
            let mut dir_rng = replicate_rng(derive_seed(cfg.seed, &[r as u64, u64::MAX]), 0);
            let u = random_direction(d, &mut dir_rng);
            Ok(Some(u.dot(&z)))
        })
        .collect()
}

fn random_direction(d: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Projected bootstrap values and their QQ table against the standard normal.
pub fn run_projected_bootstrap_qq(cfg: &ProjectionConfig) -> Result<(Vec<f64>, Vec<(f64, f64)>)> {
    let values: Vec<f64> = run_projected_bootstrap(cfg)?.into_iter().flatten().collect();
    let dropped = cfg.reps - values.len();
    if dropped > 0 {
        log::warn!("projected bootstrap: {dropped} of {} replicates dropped", cfg.reps);
    }
    let table = emit_qq(&values, 0.0, 1.0)?;
    Ok((values, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replicate_statistics() {
        let (m, c) = mc_statistics(&[1.0, 2.0], 100, &[vec![1.5, 1.0]]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, -1.0]);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[25.0, -50.0, -50.0, 100.0]));
    }

    #[test]
    fn qq_identity_line() {
        let z = Normal::standard();
        let v: Vec<f64> = (0..50).map(|i| z.inverse_cdf((i as f64 + 0.5) / 50.0)).rev().collect();
        let t = emit_qq(&v, 0.0, 1.0).unwrap();
        assert!(t.iter().all(|(q, s)| q == s));
        assert!(matches!(emit_qq(&[1.0; 20], 0.0, 1.0), Err(PaError::Degenerate(_))));
        assert!(emit_qq(&[1.0; 5], 0.0, 1.0).is_err());
    }

    #[test]
    fn inverse_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = inverse_sqrt(&m).unwrap();
        let back = &r * &m * &r;
        assert!((back - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(inverse_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in [Estimator::Mle, Estimator::Pmle, Estimator::Ee] {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("bogus".parse::<Estimator>().is_err());
    }
}
