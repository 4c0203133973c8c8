//! Generalized Pólya urns for degree counts: construction, Perron pair,
//! limit covariance and an exact simulator.
//!
//! Urn `i` holds `X_i` balls of activity `a_i`. A step picks urn `i` with
//! probability proportional to `a_i X_i` and adds the vector `xi_i`. The
//! transfer matrix is `A_ij = a_j xi_{j,i}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{PaError, Result};
use crate::model::{FamilyKind, PaFamily};
use crate::quad;
use crate::rng::{rng_from_seed, PaRng};

#[derive(Debug, Clone)]
pub struct UrnSystem {
    activities: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    transfer: DMatrix<f64>,
    lambda1: f64,
    lambda2_real: f64,
    v1: DVector<f64>,
    /// Left Perron vector scaled so that `u1 . v1 = 1`.
    u1: DVector<f64>,
    sigma: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenCondition {
    pub lambda1: f64,
    pub lambda2_real: f64,
    /// `Re lambda_2 < lambda_1 / 2`.
    pub satisfied: bool,
}

impl UrnSystem {
    /// Validates the urn and computes its Perron pair.
    pub fn new(activities: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let q = activities.len();
        if q == 0 || transitions.len() != q || transitions.iter().any(|x| x.len() != q) {
            return Err(PaError::domain(
                "need q activities and q transition vectors of length q",
            ));
        }
        if activities.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(PaError::domain("activities must be finite and nonnegative"));
        }
        let mut some_growth = false;
        for (i, xi) in transitions.iter().enumerate() {
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(PaError::domain("transition entries must be finite"));
            }
            if xi[i] < -1.0 || xi.iter().enumerate().any(|(j, v)| j != i && *v < 0.0) {
                return Err(PaError::domain(format!(
                    "transition {i}: off-diagonal entries must be >= 0 and the diagonal >= -1"
                )));
            }
            let total: f64 = xi.iter().sum();
            if total < 0.0 {
                return Err(PaError::domain(format!("transition {i} decreases the total content")));
            }
            some_growth |= total > 0.0;
        }
        if !some_growth {
            return Err(PaError::domain("no transition increases the total content"));
        }
        let transfer = DMatrix::from_fn(q, q, |i, j| activities[j] * transitions[j][i]);
        if !irreducible(&transfer) {
            return Err(PaError::domain("transfer matrix is reducible"));
        }
        let (lambda1, lambda2_real) = leading_eigenvalues(&transfer)?;
        let v = null_vector(&(&transfer - DMatrix::identity(q, q) * lambda1))?;
        let a = DVector::from_column_slice(&activities);
        let v1 = positive_scaled(v, &a, "right")?;
        let u = null_vector(&(transfer.transpose() - DMatrix::identity(q, q) * lambda1))?;
        let u1 = {
            let u = if u.sum() < 0.0 { -u } else { u };
            let dot = u.dot(&v1);
            u / dot
        };
        Ok(Self {
            activities,
            transitions,
            transfer,
            lambda1,
            lambda2_real,
            v1,
            u1,
            sigma: None,
        })
    }

    pub fn q(&self) -> usize {
        self.activities.len()
    }

    pub fn activities(&self) -> &[f64] {
        &self.activities
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2_real(&self) -> f64 {
        self.lambda2_real
    }

    /// Perron eigenvector with `a . v1 = 1`.
    pub fn v1(&self) -> &DVector<f64> {
        &self.v1
    }

    /// Almost-sure limit of `X_n / n`.
    pub fn mean_limit(&self) -> DVector<f64> {
        &self.v1 * self.lambda1
    }

    pub fn sigma(&self) -> Option<&DMatrix<f64>> {
        self.sigma.as_ref()
    }

    pub fn eigen_condition(&self) -> EigenCondition {
        EigenCondition {
            lambda1: self.lambda1,
            lambda2_real: self.lambda2_real,
            satisfied: self.lambda2_real < self.lambda1 / 2.0,
        }
    }

    /// All eigenvalues of the transfer matrix as `(re, im)` pairs, sorted by
    /// decreasing real part.
    pub fn spectrum(&self) -> Result<Vec<(f64, f64)>> {
        let mut ev: Vec<(f64, f64)> = eigenvalues(&self.transfer)?;
        ev.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));
        Ok(ev)
    }

    /// `B = sum_i v1_i a_i xi_i xi_i^T`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut b = DMatrix::zeros(q, q);
        for i in 0..q {
            let xi = DVector::from_column_slice(&self.transitions[i]);
            b += (&xi * xi.transpose()) * (self.v1[i] * self.activities[i]);
        }
        b
    }

    /// Covariance of the normal limit of `sqrt(n) (X_n / n - lambda1 v1)`,
    /// with entrywise quadrature error about `tol`.
    ///
    /// The Perron direction is deflated before exponentiating: with
    /// `P = v1 u1^T` and `D = A - lambda1 P`,
    /// `psi(s, A) = e^{sD} - lambda1 v1 a^T phi(s, D) + lambda1 s P`,
    /// which avoids cancelling two terms of size `e^{lambda1 s}`.
    pub fn limit_covariance(&self, tol: f64) -> Result<DMatrix<f64>> {
        let cond = self.eigen_condition();
        if !cond.satisfied {
            return Err(PaError::Precondition(format!(
                "Re lambda_2 = {} is not below lambda_1 / 2 = {}",
                cond.lambda2_real,
                cond.lambda1 / 2.0
            )));
        }
        let q = self.q();
        let l1 = self.lambda1;
        let proj = &self.v1 * self.u1.transpose();
        let deflated = &self.transfer - &proj * l1;
        let va = &self.v1 * DVector::from_column_slice(&self.activities).transpose() * l1;
        let b = self.b_matrix();
        let integrand = |s: f64| -> Vec<f64> {
            let mut m = DMatrix::zeros(2 * q, 2 * q);
            m.view_mut((0, 0), (q, q)).copy_from(&(&deflated * s));
            m.view_mut((0, q), (q, q)).fill_with_identity();
            m.view_mut((0, q), (q, q)).scale_mut(s);
            let e = m.exp();
            let psi = e.view((0, 0), (q, q)) - &va * e.view((0, q), (q, q)) + &proj * (l1 * s);
            let w = (-l1 * s).exp() * l1;
            (&psi * &b * psi.transpose() * w).as_slice().to_vec()
        };
        // Decay rate of the integrand, used only to size the first panel.
        let rate = (l1 - 2.0 * cond.lambda2_real.max(0.0)).max(1e-3);
        let integral = quad::integrate_to_infinity(&integrand, 0.0, 1.0 / rate, tol)?;
        let mut sigma = DMatrix::from_column_slice(q, q, &integral) - (&self.v1 * self.v1.transpose()) * (l1 * l1);
        let sym = (&sigma + sigma.transpose()) * 0.5;
        sigma.copy_from(&sym);
        Ok(sigma)
    }

    /// Computes and stores the limit covariance.
    pub fn with_covariance(mut self, tol: f64) -> Result<Self> {
        self.sigma = Some(self.limit_covariance(tol)?);
        Ok(self)
    }

    /// Runs `n` steps from `x0`.
    pub fn simulate(&self, x0: &[f64], n: u64, rng: &mut PaRng) -> Result<DVector<f64>> {
        let q = self.q();
        if x0.len() != q || x0.iter().any(|v| !(*v >= 0.0)) {
            return Err(PaError::domain("initial state must have q nonnegative entries"));
        }
        let mut x = x0.to_vec();
        let mut w = vec![0.0; q];
        for _ in 0..n {
            let mut total = 0.0;
            for i in 0..q {
                w[i] = self.activities[i] * x[i];
                total += w[i];
            }
            if !(total > 0.0) {
                return Err(PaError::Absorbing);
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = q - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    pick = i;
                    break;
                }
                u -= wi;
            }
            // Rounding can leave `u` just past the last positive weight.
            while w[pick] <= 0.0 {
                pick -= 1;
            }
            for (xj, d) in x.iter_mut().zip(&self.transitions[pick]) {
                *xj += d;
            }
        }
        Ok(DVector::from_vec(x))
    }

    /// Text bundle with the activities, transitions, transfer matrix, Perron
    /// vector and, when computed, the covariance.
    pub fn to_bundle(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# urn-bundle q={}", self.q());
        let _ = writeln!(out, "# lambda1={:?} lambda2_real={:?}", self.lambda1, self.lambda2_real);
        let row = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "[activities]\n{}", row(&mut self.activities.iter().copied()));
        out.push_str("[transitions]\n");
        for xi in &self.transitions {
            let _ = writeln!(out, "{}", row(&mut xi.iter().copied()));
        }
        out.push_str("[transfer]\n");
        for i in 0..self.q() {
            let _ = writeln!(out, "{}", row(&mut self.transfer.row(i).iter().copied()));
        }
        let _ = writeln!(out, "[v1]\n{}", row(&mut self.v1.iter().copied()));
        if let Some(s) = &self.sigma {
            out.push_str("[sigma]\n");
            for i in 0..self.q() {
                let _ = writeln!(out, "{}", row(&mut s.row(i).iter().copied()));
            }
        }
        out
    }

    /// Rebuilds an urn from [`UrnSystem::to_bundle`] output. Derived blocks
    /// are recomputed and checked against the stored ones.
    pub fn from_bundle(text: &str) -> Result<Self> {
        let mut blocks: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                blocks.push((name.to_string(), Vec::new()));
                continue;
            }
            let (_, rows) = blocks
                .last_mut()
                .ok_or_else(|| PaError::parse("data before first block header"))?;
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| PaError::parse(format!("{t}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        let block = |name: &str| blocks.iter().find(|(n, _)| n == name).map(|(_, r)| r);
        let activities = block("activities")
            .and_then(|r| r.first().cloned())
            .ok_or_else(|| PaError::parse("missing [activities]"))?;
        let transitions = block("transitions")
            .cloned()
            .ok_or_else(|| PaError::parse("missing [transitions]"))?;
        let mut urn = Self::new(activities, transitions)?;
        if let Some(t) = block("transfer") {
            let q = urn.q();
            if t.len() != q || (0..q).any(|i| t[i].len() != q || (0..q).any(|j| t[i][j] != urn.transfer[(i, j)])) {
                return Err(PaError::Integrity(
                    "stored transfer matrix disagrees with a and xi".into(),
                ));
            }
        }
        if let Some(s) = block("sigma") {
            let q = urn.q();
            if s.len() != q || s.iter().any(|r| r.len() != q) {
                return Err(PaError::parse("[sigma] must be q x q"));
            }
            urn.sigma = Some(DMatrix::from_fn(q, q, |i, j| s[i][j]));
        }
        Ok(urn)
    }
}

/// Strong connectivity of the directed graph with an edge `j -> i` whenever
/// `A_ij != 0`.
fn irreducible(a: &DMatrix<f64>) -> bool {
    let q = a.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; q];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for i in 0..q {
                let entry = if forward { a[(i, j)] } else { a[(j, i)] };
                if i != j && entry != 0.0 && !seen[i] {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| PaError::Numeric("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

/// Perron root and the largest real part among the remaining eigenvalues.
fn leading_eigenvalues(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let ev = eigenvalues(a)?;
    let top = (0..ev.len())
        .max_by(|&i, &j| ev[i].0.total_cmp(&ev[j].0))
        .expect("non-empty spectrum");
    let (l1, im) = ev[top];
    if im.abs() > 1e-9 * l1.abs().max(1.0) || !(l1 > 0.0) {
        return Err(PaError::Numeric(format!(
            "leading eigenvalue {l1} + {im}i is not real and positive"
        )));
    }
    let l2 = ev
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, z)| z.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((l1, l2))
}

/// Right singular vector of the smallest singular value.
fn null_vector(c: &DMatrix<f64>) -> Result<DVector<f64>> {
    let svd = c.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| PaError::Numeric("SVD failed".into()))?;
    let k = svd.singular_values.imin();
    Ok(vt.row(k).transpose())
}

fn positive_scaled(v: DVector<f64>, a: &DVector<f64>, side: &str) -> Result<DVector<f64>> {
    let v = if v.sum() < 0.0 { -v } else { v };
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(PaError::Numeric(format!(
            "{side} Perron vector is not strictly positive: {v:?}"
        )));
    }
    let s = a.dot(&v);
    Ok(v / s)
}

/// Affine urn `f(k) = k + alpha` tracking degrees `1..=kappa` and the total
/// preference of higher degrees.
pub fn build_affine_urn(alpha: f64, kappa: usize) -> Result<UrnSystem> {
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(PaError::domain("alpha must exceed -1"));
    }
    if kappa < 2 {
        return Err(PaError::domain("kappa must be at least 2"));
    }
    let q = kappa + 1;
    let mut activities: Vec<f64> = (1..=kappa).map(|l| l as f64 + alpha).collect();
    activities.push(1.0);
    let mut xi = vec![vec![0.0; q]; q];
    for (i, row) in xi.iter_mut().enumerate().take(kappa) {
        row[i] -= 1.0;
        row[0] += 1.0;
        row[i + 1] += if i + 1 == kappa {
            kappa as f64 + 1.0 + alpha
        } else {
            1.0
        };
    }
    xi[kappa][kappa] += 1.0;
    xi[kappa][0] += 1.0;
    UrnSystem::new(activities, xi)
}

/// Urn for a preference function constant on `[kappa, inf)`: degrees
/// `1..=kappa` and the count of higher degrees.
pub fn build_cutoff_urn(family: &PaFamily, theta: &[f64], kappa: usize) -> Result<UrnSystem> {
    family.check_theta(theta)?;
    let constant_from = match family.kind() {
        FamilyKind::EventuallyConstant { cutoff } => *cutoff,
        FamilyKind::PowerOffset if theta[1] == 0.0 => 1,
        _ => return Err(PaError::domain(format!("{} is not eventually constant", family.kind()))),
    };
    if kappa < constant_from.max(1) {
        return Err(PaError::domain(format!(
            "preference is not constant beyond kappa = {kappa} (constant from {constant_from})"
        )));
    }
    let q = kappa + 1;
    let activities: Vec<f64> = (1..=q).map(|i| family.value(theta, i.min(kappa))).collect();
    let mut xi = vec![vec![0.0; q]; q];
    for (i, row) in xi.iter_mut().enumerate().take(kappa) {
        row[i] -= 1.0;
        row[i + 1] += 1.0;
        row[0] += 1.0;
    }
    xi[kappa][0] = 1.0;
    UrnSystem::new(activities, xi)
}

pub fn eigen_condition(system: &UrnSystem) -> EigenCondition {
    system.eigen_condition()
}

/// One urn path of `n` steps from a single ball in urn 1.
pub fn urn_simulate(system: &UrnSystem, n: u64, seed: u64) -> Result<DVector<f64>> {
    let mut x0 = vec![0.0; system.q()];
    x0[0] = 1.0;
    system.simulate(&x0, n, &mut rng_from_seed(seed))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > -1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(PaError::domain("alpha must exceed -1"))
    }
}

/// `p_1..=p_kmax` of the affine limit law via
/// `p_k = p_{k-1} (k - 1 + alpha) / (k + 2 + 2 alpha)`.
pub fn affine_law(alpha: f64, kmax: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let mut p = Vec::with_capacity(kmax);
    let mut cur = (2.0 + alpha) / (3.0 + 2.0 * alpha);
    for k in 1..=kmax {
        if k > 1 {
            let kf = k as f64;
            cur *= (kf - 1.0 + alpha) / (kf + 2.0 + 2.0 * alpha);
        }
        p.push(cur);
    }
    Ok(p)
}

pub fn affine_pk(alpha: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(PaError::domain("k must be at least 1"));
    }
    Ok(affine_law(alpha, k)?[k - 1])
}

/// `sum_{l > k} p_l (l + alpha)`, using that the full sum equals `2 + alpha`.
pub fn affine_tail_preference(alpha: f64, k: usize) -> Result<f64> {
    let p = affine_law(alpha, k)?;
    let head: f64 = p.iter().enumerate().map(|(i, pl)| pl * (i as f64 + 1.0 + alpha)).sum();
    Ok(2.0 + alpha - head)
}

/// Both sides of `sum_{l>k} p_l (l + alpha) = (k + alpha)(k + 1 + alpha) p_k / (1 + alpha)`.
pub fn lemma_b3_check(alpha: f64, k: usize) -> Result<(f64, f64)> {
    let lhs = affine_tail_preference(alpha, k)?;
    let kf = k as f64;
    let rhs = (kf + alpha) * (kf + 1.0 + alpha) / (1.0 + alpha) * affine_pk(alpha, k)?;
    Ok((lhs, rhs))
}

/// `(p_1, .., p_kappa, sum_{l>kappa} p_l (l + alpha))`, the limit of `X_n / n`
/// for the affine urn.
pub fn affine_urn_mean(alpha: f64, kappa: usize) -> Result<Vec<f64>> {
    let mut m = affine_law(alpha, kappa)?;
    m.push(affine_tail_preference(alpha, kappa)?);
    Ok(m)
}

/// Linear map from urn coordinates to `(P_{>1}, .., P_{>kappa})` up to the
/// constant: `P_{>k} = 1 - sum_{j <= k} P_j`.
pub fn tail_map(kappa: usize) -> DMatrix<f64> {
    DMatrix::from_fn(kappa, kappa + 1, |k, j| if j <= k { -1.0 } else { 0.0 })
}

/// `(R)_{ij} = 1{i=j} p_i (1 - p_i) - 1{i != j} p_i p_j` for the affine law.
pub fn mori_covariance(alpha: f64, kappa: usize) -> Result<DMatrix<f64>> {
    let p = affine_law(alpha, kappa)?;
    Ok(DMatrix::from_fn(kappa, kappa, |i, j| {
        if i == j {
            p[i] * (1.0 - p[i])
        } else {
            -p[i] * p[j]
        }
    }))
}

/// Covariance of `sqrt(n) (P_{>k}(n) - p_{>k})`, `k = 1..=kappa`, implied by
/// the urn limit covariance.
pub fn tail_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let kappa = sigma.nrows() - 1;
    let l = tail_map(kappa);
    &l * sigma * l.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_urn() -> UrnSystem {
        let fam = PaFamily::eventually_constant(1).unwrap();
        build_cutoff_urn(&fam, &[1.0], 1).unwrap()
    }

    #[test]
    fn two_urn_constant_case() {
        let u = constant_urn();
        assert_eq!(u.transfer(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let c = u.eigen_condition();
        assert!((c.lambda1 - 1.0).abs() < 1e-14 && (c.lambda2_real + 1.0).abs() < 1e-14 && c.satisfied);
        assert!((u.v1()[0] - 0.5).abs() < 1e-14 && (u.v1()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn constant_case_covariance_is_k_over_12() {
        let s = constant_urn().limit_covariance(1e-13).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]) / 12.0;
        assert!((s - k).amax() < 1e-10);
    }

    #[test]
    fn affine_transfer_matrix_layout() {
        let alpha = 0.7;
        let kappa = 4;
        let u = build_affine_urn(alpha, kappa).unwrap();
        let a = u.transfer();
        for j in 1..kappa {
            assert!((a[(0, j)] - (j as f64 + 1.0 + alpha)).abs() < 1e-15);
        }
        assert_eq!(a[(0, 0)], 0.0);
        assert_eq!(a[(0, kappa)], 1.0);
        assert_eq!(a[(kappa, kappa)], 1.0);
        for j in 0..kappa - 1 {
            assert_eq!(a[(j + 1, j)], j as f64 + 1.0 + alpha);
        }
        for j in 1..kappa {
            assert_eq!(a[(j, j)], -(j as f64 + 1.0 + alpha));
        }
        let k = kappa as f64;
        assert!((a[(kappa, kappa - 1)] - (k + alpha) * (k + 1.0 + alpha)).abs() < 1e-12);
    }

    #[test]
    fn affine_spectrum_factorizes() {
        let u = build_affine_urn(0.0, 2).unwrap();
        let ev = u.spectrum().unwrap();
        let want = [2.0, -1.0, -2.0];
        for (e, w) in ev.iter().zip(want) {
            assert!((e.0 - w).abs() < 1e-10 && e.1.abs() < 1e-10);
        }
        let c = u.eigen_condition();
        assert!((c.lambda1 - 2.0).abs() < 1e-12 && (c.lambda2_real + 1.0).abs() < 1e-10 && c.satisfied);
    }

    #[test]
    fn affine_perron_vector_is_the_limit_law() {
        let u = build_affine_urn(0.0, 5).unwrap();
        let m = u.mean_limit();
        for k in 1..=5 {
            let kf = k as f64;
            assert!((m[k - 1] - 4.0 / (kf * (kf + 1.0) * (kf + 2.0))).abs() < 1e-12);
        }
        let closed = affine_urn_mean(0.0, 5).unwrap();
        assert!((m[5] - closed[5]).abs() < 1e-12);
        let a = DVector::from_column_slice(u.activities());
        assert!((a.dot(u.v1()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_vector_matches_adjugate_column() {
        // adj(C) e_1 for C = A - lambda1 I, via cofactors of the first row.
        let u = build_affine_urn(1.5, 3).unwrap();
        let q = u.q();
        let c = u.transfer() - DMatrix::identity(q, q) * u.lambda1();
        let adj_col: Vec<f64> = (0..q)
            .map(|i| {
                let minor = c.clone().remove_row(0).remove_column(i);
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * minor.determinant()
            })
            .collect();
        let adj = DVector::from_vec(adj_col);
        let a = DVector::from_column_slice(u.activities());
        let adj = &adj / a.dot(&adj);
        assert!((adj - u.v1()).amax() < 1e-10);
    }

    #[test]
    fn rejects_bad_urns() {
        assert!(build_affine_urn(0.0, 1).is_err());
        assert!(build_affine_urn(-1.0, 3).is_err());
        assert!(build_cutoff_urn(&PaFamily::affine(), &[0.0], 3).is_err());
        let ec = PaFamily::eventually_constant(3).unwrap();
        assert!(build_cutoff_urn(&ec, &[1.0, 2.0, 3.0], 2).is_err());
        // Two isolated urns.
        let r = UrnSystem::new(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(r, Err(PaError::Domain(_))));
        let r = UrnSystem::new(vec![1.0, 1.0], vec![vec![-2.0, 3.0], vec![1.0, 0.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn cutoff_urn_layout() {
        let fam = PaFamily::eventually_constant(3).unwrap();
        let theta = [1.0, 1.5, 2.5];
        let u = build_cutoff_urn(&fam, &theta, 4).unwrap();
        let f = |k: usize| fam.value(&theta, k);
        let a = u.transfer();
        for j in 1..=4 {
            assert_eq!(a[(0, j)], f(j + 1));
        }
        for j in 1..4 {
            assert_eq!(a[(j, j)], -f(j + 1));
            assert_eq!(a[(j, j - 1)], f(j));
        }
        assert_eq!(a[(4, 3)], f(4));
        assert_eq!(a[(4, 4)], 0.0);
        assert!(u.eigen_condition().satisfied);
    }

    #[test]
    fn cutoff_urn_mean_matches_limit_law() {
        let fam = PaFamily::eventually_constant(3).unwrap();
        let theta = [1.0, 1.5, 2.5];
        let u = build_cutoff_urn(&fam, &theta, 3).unwrap();
        let law = crate::limits::limit_law(&fam, &theta, 1e-14).unwrap();
        let m = u.mean_limit();
        for k in 1..=3 {
            assert!((m[k - 1] - law.p(k)).abs() < 1e-10);
        }
        assert!((m[3] - law.p_tail(3)).abs() < 1e-10);
        assert!((u.lambda1() - law.lambda_star).abs() < 1e-10);
    }

    #[test]
    fn affine_law_values() {
        let p = affine_law(0.0, 3).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((p[2] - 1.0 / 15.0).abs() < 1e-15);
        assert!((affine_tail_preference(0.0, 1).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        for alpha in [-0.5, 0.0, 2.0] {
            let total: f64 = affine_law(alpha, 200_000).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-8, "{alpha}: {total}");
        }
    }

    #[test]
    fn lemma_identity_holds() {
        for alpha in [-0.9, -0.5, 0.0, 1.0, 3.5] {
            for k in 1..=30 {
                let (l, r) = lemma_b3_check(alpha, k).unwrap();
                assert!((l - r).abs() < 1e-10 * r.max(1.0), "alpha={alpha} k={k}: {l} vs {r}");
            }
        }
    }

    #[test]
    fn lemma_tail_by_direct_summation() {
        // Independent of the mean identity: sum p_l (l + alpha) explicitly.
        let alpha = 2.0;
        let p = affine_law(alpha, 2_000_000).unwrap();
        for k in [1usize, 4, 9] {
            let direct: f64 = p[k..]
                .iter()
                .enumerate()
                .map(|(i, pl)| pl * ((k + i + 1) as f64 + alpha))
                .sum();
            let (lhs, _) = lemma_b3_check(alpha, k).unwrap();
            assert!((direct - lhs).abs() < 1e-11, "{direct} vs {lhs}");
        }
    }

    #[test]
    fn simulate_edge_cases() {
        let u = constant_urn();
        let x = urn_simulate(&u, 0, 1).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0]);
        let dead = u.simulate(&[0.0, 0.0], 1, &mut rng_from_seed(1));
        assert!(matches!(dead, Err(PaError::Absorbing)));
        let x = urn_simulate(&u, 1000, 3).unwrap();
        assert_eq!(x.sum(), 1001.0);
    }

    #[test]
    fn bundle_round_trip() {
        let u = build_affine_urn(0.5, 3).unwrap().with_covariance(1e-10).unwrap();
        let text = u.to_bundle();
        let back = UrnSystem::from_bundle(&text).unwrap();
        assert_eq!(back.to_bundle(), text);
        let broken = text.replace("[transfer]\n0.0", "[transfer]\n1.0");
        assert!(UrnSystem::from_bundle(&broken).is_err());
    }

    #[test]
    fn precondition_on_eigen_condition() {
        // Triangular-ish urn with a second eigenvalue too close to the first.
        let u = UrnSystem::new(vec![1.0, 1.0], vec![vec![1.0, 0.01], vec![0.01, 0.9]]).unwrap();
        assert!(!u.eigen_condition().satisfied);
        assert!(matches!(u.limit_covariance(1e-8), Err(PaError::Precondition(_))));
    }
}
