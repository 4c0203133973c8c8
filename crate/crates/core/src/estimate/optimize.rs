//! Projected Newton ascent over a parameter box.

use nalgebra::{DMatrix, DVector};

use super::likelihood::Eval;
use crate::error::{PaError, Result};
use crate::model::{DerivOrder, ParamBox};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop when the max-abs score over free coordinates is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            armijo: 1e-4,
        }
    }
}

/// Distance within which a coordinate counts as sitting on its bound.
pub const BOUNDARY_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// Objective at `theta_hat`.
    pub objective: f64,
    /// Max-abs of the full score at `theta_hat`.
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub at_boundary: Vec<bool>,
}

impl FitResult {
    pub fn csv_header(d: usize) -> String {
        let mut cols: Vec<String> = (0..d).map(|i| format!("theta{i}")).collect();
        cols.extend(["objective", "score_norm", "iterations", "converged"].map(String::from));
        cols.extend((0..d).map(|i| format!("boundary{i}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.theta_hat.iter().map(|t| format!("{t:?}")).collect();
        cols.push(format!("{:?}", self.objective));
        cols.push(format!("{:?}", self.score_norm));
        cols.push(self.iterations.to_string());
        cols.push(self.converged.to_string());
        cols.extend(self.at_boundary.iter().map(|b| b.to_string()));
        cols.join(",")
    }

    pub fn report(&self) -> String {
        let theta: Vec<String> = self.theta_hat.iter().map(|t| format!("{t:.10}")).collect();
        format!(
            "theta_hat   = [{}]\nobjective   = {:.12}\nscore_norm  = {:.3e}\niterations  = {}\nconverged   = {}\nat_boundary = {:?}\n",
            theta.join(", "),
            self.objective,
            self.score_norm,
            self.iterations,
            self.converged,
            self.at_boundary
        )
    }
}

/// Coordinates held fixed this iteration: pinned by the box, or on a bound
/// with the score pointing outward.
fn active_set(bounds: &ParamBox, theta: &[f64], grad: &DVector<f64>) -> Vec<bool> {
    (0..theta.len())
        .map(|i| {
            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
            lo == hi
                || (theta[i] <= lo + BOUNDARY_EPS && grad[i] < 0.0)
                || (theta[i] >= hi - BOUNDARY_EPS && grad[i] > 0.0)
        })
        .collect()
}

/// Ascent direction on the free coordinates: Newton when `-H` is positive
/// definite, otherwise Newton on `-H + mu I` with growing `mu`, which tends
/// to a scaled gradient step.
fn direction(grad: &DVector<f64>, hess: &DMatrix<f64>, free: &[usize]) -> DVector<f64> {
    let m = free.len();
    let d = grad.len();
    let g = DVector::from_iterator(m, free.iter().map(|&i| grad[i]));
    let neg_h = DMatrix::from_fn(m, m, |a, b| -hess[(free[a], free[b])]);
    let scale = (0..m).map(|a| neg_h[(a, a)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut mat = neg_h.clone();
        for a in 0..m {
            mat[(a, a)] += shift;
        }
        if let Some(ch) = mat.cholesky() {
            let step = ch.solve(&g);
            let mut full = DVector::zeros(d);
            for (a, &i) in free.iter().enumerate() {
                full[i] = step[a];
            }
            if step.iter().all(|v| v.is_finite()) {
                return full;
            }
        }
        shift = if shift == 0.0 { 1e-6 * scale } else { shift * 10.0 };
    }
    let mut full = DVector::zeros(d);
    for (a, &i) in free.iter().enumerate() {
        full[i] = g[a] / scale;
    }
    full
}

/// Maximizes an objective over `bounds` starting from `init`.
pub fn maximize<F>(bounds: &ParamBox, init: &[f64], opts: NewtonOptions, eval: F) -> Result<FitResult>
where
    F: Fn(&[f64], DerivOrder) -> Result<Eval>,
{
    let d = bounds.dim();
    let mut theta = bounds.project(init);
    let mut cur = eval(&theta, DerivOrder::Second)?;
    for iter in 0..=opts.max_iter {
        let active = active_set(bounds, &theta, &cur.grad);
        let free: Vec<usize> = (0..d).filter(|i| !active[*i]).collect();
        let free_norm = free.iter().map(|&i| cur.grad[i].abs()).fold(0.0, f64::max);
        if free_norm <= opts.tol {
            return Ok(finish(bounds, theta, &cur, iter, true));
        }
        if iter == opts.max_iter {
            break;
        }
        let mut accepted = None;
        let newton = direction(&cur.grad, &cur.hess, &free);
        let gradient = {
            let mut g = DVector::zeros(d);
            for &i in &free {
                g[i] = cur.grad[i];
            }
            let scale = cur.grad.amax().max(1.0);
            g / scale
        };
        // Once the predicted gain of the Newton step is below the rounding
        // noise of the objective, the line search can no longer tell good
        // steps from bad ones; the free score norm is used as merit instead.
        let gain: f64 = free.iter().map(|&i| newton[i] * cur.grad[i]).sum();
        if gain.abs() <= 1e-11 * (1.0 + cur.value.abs()) {
            let trial = bounds.project(&(0..d).map(|i| theta[i] + newton[i]).collect::<Vec<_>>());
            if let Ok(next) = eval(&trial, DerivOrder::Second) {
                let norm = free.iter().map(|&i| next.grad[i].abs()).fold(0.0, f64::max);
                if next.value.is_finite() && norm < 0.5 * free_norm {
                    accepted = Some((trial, Some(next)));
                }
            }
        }
        if accepted.is_none() {
            'dirs: for dir in [&newton, &gradient] {
                let mut t = 1.0;
                for _ in 0..60 {
                    let trial: Vec<f64> = bounds.project(&(0..d).map(|i| theta[i] + t * dir[i]).collect::<Vec<_>>());
                    let moved: f64 = (0..d).map(|i| (trial[i] - theta[i]) * cur.grad[i]).sum();
                    if moved <= 0.0 && trial == theta {
                        break;
                    }
                    let val = eval(&trial, DerivOrder::Value)?.value;
                    if val.is_finite() && val >= cur.value + opts.armijo * moved {
                        accepted = Some((trial, None));
                        break 'dirs;
                    }
                    t *= 0.5;
                }
            }
        }
        match accepted {
            Some((next, evaluated)) => {
                cur = match evaluated {
                    Some(e) => e,
                    None => eval(&next, DerivOrder::Second)?,
                };
                theta = next;
            }
            None => {
                if gain.abs() <= 64.0 * f64::EPSILON * (1.0 + cur.value.abs()) {
                    return Ok(finish(bounds, theta, &cur, iter, true));
                }
                return Err(PaError::convergence(
                    format!("line search stalled with free score norm {free_norm:.3e}"),
                    Some(theta.clone()),
                    Some(free_norm),
                ));
            }
        }
    }
    let free_norm = cur.grad.amax();
    Err(PaError::convergence(
        format!("no convergence within {} iterations", opts.max_iter),
        Some(theta),
        Some(free_norm),
    ))
}

fn finish(bounds: &ParamBox, theta: Vec<f64>, cur: &Eval, iterations: usize, converged: bool) -> FitResult {
    let at_boundary = (0..theta.len())
        .map(|i| {
            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
            lo == hi
                || (theta[i] <= lo + BOUNDARY_EPS && cur.grad[i] <= 0.0)
                || (theta[i] >= hi - BOUNDARY_EPS && cur.grad[i] >= 0.0)
        })
        .collect();
    FitResult {
        theta_hat: theta,
        objective: cur.value,
        score_norm: cur.grad.amax(),
        iterations,
        converged,
        at_boundary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(center: [f64; 2]) -> impl Fn(&[f64], DerivOrder) -> Result<Eval> {
        move |x: &[f64], _| {
            let a = x[0] - center[0];
            let b = x[1] - center[1];
            Ok(Eval {
                value: -(a * a + a * b + 2.0 * b * b),
                grad: DVector::from_vec(vec![-(2.0 * a + b), -(a + 4.0 * b)]),
                hess: DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, -1.0, -4.0]),
            })
        }
    }

    #[test]
    fn interior_maximum() {
        let b = ParamBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let r = maximize(&b, &[4.0, -4.0], NewtonOptions::default(), quad([1.0, 2.0])).unwrap();
        assert!((r.theta_hat[0] - 1.0).abs() < 1e-12 && (r.theta_hat[1] - 2.0).abs() < 1e-12);
        assert!(r.converged && r.at_boundary.iter().all(|b| !b));
    }

    #[test]
    fn boundary_maximum() {
        let b = ParamBox::new(vec![-5.0, -5.0], vec![5.0, 1.0]).unwrap();
        let r = maximize(&b, &[0.0, 0.0], NewtonOptions::default(), quad([1.0, 2.0])).unwrap();
        assert_eq!(r.theta_hat[1], 1.0);
        // Free coordinate solves 2a + b = 0 with b = -1.
        assert!((r.theta_hat[0] - 1.5).abs() < 1e-10);
        assert_eq!(r.at_boundary, vec![false, true]);
        assert!(r.score_norm > 1e-8);
    }
}
