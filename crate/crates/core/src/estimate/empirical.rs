//! Empirical estimator: match `f(k)/f(1)` to the ratio statistics
//! `r_k = N_{>k} / N_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{PaError, Result};
use crate::model::{DerivOrder, FamilyKind, PaFamily};
use crate::tree::DegreeSnapshot;

/// `r_k(n) = N_{>k}(n) / N_k(n)`.
pub fn empirical_rk(snapshot: &DegreeSnapshot, k: usize) -> Result<f64> {
    let nk = snapshot.count(k);
    if nk == 0 {
        return Err(PaError::UndefinedRatio(k));
    }
    Ok(snapshot.tail_count(k) as f64 / nk as f64)
}

/// Target ratios `r_k / r_1` for `k = 2..=d+1`.
fn target_ratios(snapshot: &DegreeSnapshot, d: usize) -> Result<Vec<f64>> {
    let r1 = empirical_rk(snapshot, 1).map_err(|_| PaError::InsufficientData("no degree-1 nodes".into()))?;
    if r1 <= 0.0 {
        return Err(PaError::InsufficientData("r_1 is zero".into()));
    }
    (2..=d + 1)
        .map(|k| match empirical_rk(snapshot, k) {
            Ok(r) => Ok(r / r1),
            Err(_) => Err(PaError::InsufficientData(format!("no nodes of degree {k}"))),
        })
        .collect()
}

/// Residuals `f(k)/f(1) - target_k` and their Jacobian.
fn residuals(family: &PaFamily, theta: &[f64], targets: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = family.dim();
    let m = targets.len();
    let table = family.table_unchecked(theta, m + 1, DerivOrder::First);
    let f1 = table.f(1);
    let g1 = table.df(1);
    let mut r = DVector::zeros(m);
    let mut j = DMatrix::zeros(m, d);
    for (row, target) in targets.iter().enumerate() {
        let k = row + 2;
        let fk = table.f(k);
        r[row] = fk / f1 - target;
        let gk = table.df(k);
        for i in 0..d {
            j[(row, i)] = (gk[i] * f1 - fk * g1[i]) / (f1 * f1);
        }
    }
    (r, j)
}

/// Projected Levenberg-Marquardt on `0.5 |r(theta)|^2` within the box.
/// Returns the final point and `|r|_inf`.
fn solve_ratio_system(family: &PaFamily, targets: &[f64], start: &[f64]) -> (Vec<f64>, f64, bool) {
    let bounds = family.bounds();
    let d = family.dim();
    let mut theta = bounds.project(start);
    let (mut r, mut j) = residuals(family, &theta, targets);
    let mut cost = 0.5 * r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..500 {
        let g = j.transpose() * &r;
        // Projected gradient measures first-order optimality on the box.
        let pg = (0..d)
            .map(|i| ((theta[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - theta[i]).abs())
            .fold(0.0, f64::max);
        if cost < 1e-30 || pg < 1e-12 * (1.0 + theta.iter().fold(0.0f64, |m, t| m.max(t.abs()))) {
            return (theta, r.amax(), true);
        }
        // Coordinates on a bound whose descent direction points out of the
        // box are held fixed; otherwise the blocked step stalls the rest.
        let free: Vec<usize> = (0..d)
            .filter(|&i| {
                let at_lo = theta[i] <= bounds.lower[i] && g[i] > 0.0;
                let at_hi = theta[i] >= bounds.upper[i] && g[i] < 0.0;
                bounds.lower[i] < bounds.upper[i] && !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            return (theta, r.amax(), true);
        }
        let jf = DMatrix::from_fn(j.nrows(), free.len(), |a, b| j[(a, free[b])]);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let jtj = jf.transpose() * &jf;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..free.len() {
                a[(i, i)] += mu * (jtj[(i, i)] + 1e-12);
            }
            let Some(step_f) = a.lu().solve(&(-&gf)) else {
                mu *= 10.0;
                continue;
            };
            let mut step = DVector::zeros(d);
            for (a, &i) in free.iter().enumerate() {
                step[i] = step_f[a];
            }
            let trial: Vec<f64> = bounds.project(&(0..d).map(|i| theta[i] + step[i]).collect::<Vec<_>>());
            let (rt, jt) = residuals(family, &trial, targets);
            let ct = 0.5 * rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let moved = (0..d).map(|i| (trial[i] - theta[i]).abs()).fold(0.0, f64::max);
                theta = trial;
                r = rt;
                j = jt;
                let small = cost - ct <= 1e-14 * cost.max(1e-300) || moved < 1e-13;
                cost = ct;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if small {
                    return (theta, r.amax(), true);
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            return (theta, r.amax(), true);
        }
    }
    (theta, r.amax(), false)
}

/// Starting points: the box center and a coarse grid.
fn starts(family: &PaFamily) -> Vec<Vec<f64>> {
    let b = family.bounds();
    let mut out = vec![b.center()];
    let d = family.dim();
    if d <= 2 {
        let fracs = [0.02, 0.1, 0.3, 0.6, 0.9];
        let per: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                fracs
                    .iter()
                    .map(|f| b.lower[i] + f * (b.upper[i] - b.lower[i]))
                    .collect()
            })
            .collect();
        if d == 1 {
            out.extend(per[0].iter().map(|v| vec![*v]));
        } else {
            for a in &per[0] {
                for c in &per[1] {
                    out.push(vec![*a, *c]);
                }
            }
        }
    }
    out
}

/// Solves `f(k)/f(1) = r_k/r_1`, `k = 2..=d+1`, projected to the box.
pub fn empirical_fit(family: &PaFamily, snapshot: &DegreeSnapshot) -> Result<Vec<f64>> {
    let targets = target_ratios(snapshot, family.dim())?;
    fit_ratios(family, &targets)
}

/// Same as [`empirical_fit`] with the ratio targets given directly.
pub fn fit_ratios(family: &PaFamily, targets: &[f64]) -> Result<Vec<f64>> {
    if targets.len() != family.dim() {
        return Err(PaError::domain("need one ratio per parameter"));
    }
    if let FamilyKind::EventuallyConstant { .. } = family.kind() {
        return Ok(eventually_constant_ratios(family, targets));
    }
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in starts(family) {
        let cand = solve_ratio_system(family, targets, &s);
        let better = match &best {
            None => true,
            Some(b) => cand.1 < b.1,
        };
        if better {
            best = Some(cand);
        }
        if best.as_ref().is_some_and(|b| b.1 < 1e-13) {
            break;
        }
    }
    let (theta, residual, ok) = best.expect("at least one start");
    if !ok {
        return Err(PaError::convergence(
            "empirical estimator did not converge",
            Some(theta),
            Some(residual),
        ));
    }
    Ok(theta)
}

/// Direct solution for the eventually-constant family: `f(k) = f(1) * target_k`,
/// with `f(1)` taken as the lower end of its box when pinned, else 1.
fn eventually_constant_ratios(family: &PaFamily, targets: &[f64]) -> Vec<f64> {
    let b = family.bounds();
    let f1 = if b.lower[0] == b.upper[0] {
        b.lower[0]
    } else {
        1.0f64.clamp(b.lower[0], b.upper[0])
    };
    let mut theta = vec![f1];
    // targets[k-2] pairs with f(k) for k = 2..=K; the last target, at K + 1,
    // duplicates f(K) and is dropped.
    theta.extend(targets.iter().take(family.dim() - 1).map(|t| f1 * t));
    let mut theta = b.project(&theta);
    for i in 1..theta.len() {
        if theta[i] < theta[i - 1] {
            theta[i] = theta[i - 1];
        }
    }
    theta
}

/// Picks the candidate whose ratios best match the snapshot, by
/// `sum_k |f(k)/f(1) - r_k/r_1|` over defined ratios. Ties go to the
/// earlier candidate.
pub fn hybrid_select(family: &PaFamily, candidates: &[Vec<f64>], snapshot: &DegreeSnapshot) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(PaError::domain("no candidates"));
    }
    let r1 = empirical_rk(snapshot, 1).ok().filter(|r| *r > 0.0);
    let d = family.dim();
    let ratios: Vec<(usize, f64)> = match r1 {
        None => Vec::new(),
        Some(r1) => (2..=d + 1)
            .filter_map(|k| empirical_rk(snapshot, k).ok().map(|r| (k, r / r1)))
            .collect(),
    };
    if ratios.is_empty() {
        return Err(PaError::InsufficientData("no defined ratio statistics".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (idx, theta) in candidates.iter().enumerate() {
        family.check_theta(theta)?;
        let f1 = family.value(theta, 1);
        let dist: f64 = ratios
            .iter()
            .map(|(k, t)| (family.value(theta, *k) / f1 - t).abs())
            .sum();
        if dist < best.0 {
            best = (dist, idx);
        }
    }
    Ok(candidates[best.1].clone())
}
