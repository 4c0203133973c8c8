//! Limit score, asymptotic information, the affinity Wald test and the
//! bootstrap variance of the pseudo-likelihood estimator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PaError, Result};
use crate::estimate::fit_pmle;
use crate::limits::{law_at, limit_law, series_tail, LimitLaw, DEFAULT_TAIL_TOL};
use crate::model::{FamilyKind, GrowthClass, PaFamily};
use crate::quad::integrate_to_infinity;
use crate::rng::{replicate_rng, PaRng};
use crate::tree::{grow_with, GrowOptions};

/// Upper 5% point of the standard normal.
pub const Z_0_05: f64 = 1.644854;
/// Upper 2.5% point of the standard normal.
pub const Z_0_025: f64 = 1.959964;

/// Largest tail contribution tolerated in truncated limit sums.
const LIMIT_TAIL_TOL: f64 = 1e-6;
/// Target accuracy of the information matrix series.
const V0_TAIL_TOL: f64 = 1e-10;
/// Explicit terms summed for affine laws before the power-law tail.
const AFFINE_EXPLICIT_TERMS: usize = 20_000;

/// `q`-quantile of the standard normal.
pub fn normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

fn grad_over_f(family: &PaFamily, theta: &[f64], x: f64, out: &mut [f64]) -> f64 {
    family.gradient_at(theta, x, out);
    let f = family.value_at(theta, x);
    out.iter_mut().for_each(|v| *v /= f);
    f
}

/// Estimate of `sum_{k>K} p_{>k}` from the last two retained tails.
fn tail_sum_estimate(law: &LimitLaw) -> f64 {
    let k = law.k_trunc();
    let last = law.p_tail(k);
    if k < 2 {
        return last;
    }
    let q = last / law.p_tail(k - 1);
    if q < 1.0 {
        last * q / (1.0 - q)
    } else {
        f64::INFINITY
    }
}

fn truncation_check(family: &PaFamily, theta: &[f64], law: &LimitLaw) -> Result<()> {
    let d = family.dim();
    let k = law.k_trunc();
    let mut g = vec![0.0; d];
    grad_over_f(family, theta, (2 * k) as f64, &mut g);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = 2.0 * gmax * tail_sum_estimate(law);
    if !(bound <= LIMIT_TAIL_TOL) {
        return Err(PaError::Truncation(format!(
            "limit sums truncated at K = {k} leave an estimated {bound:e}"
        )));
    }
    Ok(())
}

/// Limit of the normalized score at `theta` when degrees follow `law0`:
/// `sum_k (grad f/f)(k) p_{>k} - sum_k p_k grad f(k) / sum_k p_k f(k)`.
pub fn limit_score(family: &PaFamily, theta: &[f64], law0: &LimitLaw) -> Result<DVector<f64>> {
    family.check_theta(theta)?;
    truncation_check(family, theta, law0)?;
    let d = family.dim();
    let mut first = DVector::<f64>::zeros(d);
    let mut num = DVector::<f64>::zeros(d);
    let mut den = 0.0;
    let mut g = vec![0.0; d];
    for k in 1..=law0.k_trunc() {
        family.gradient_into(theta, k, &mut g);
        let f = family.value(theta, k);
        let (p, pt) = (law0.p(k), law0.p_tail(k));
        for i in 0..d {
            first[i] += g[i] / f * pt;
            num[i] += p * g[i];
        }
        den += p * f;
    }
    Ok(first - num / den)
}

/// Jacobian of [`limit_score`] in `theta`.
pub fn limit_hessian(family: &PaFamily, theta: &[f64], law0: &LimitLaw) -> Result<DMatrix<f64>> {
    family.check_theta(theta)?;
    truncation_check(family, theta, law0)?;
    let d = family.dim();
    let mut first = DMatrix::<f64>::zeros(d, d);
    let mut s_h = DMatrix::<f64>::zeros(d, d);
    let mut s_g = DVector::<f64>::zeros(d);
    let mut s_f = 0.0;
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    for k in 1..=law0.k_trunc() {
        family.gradient_into(theta, k, &mut g);
        family.hessian_into(theta, k, &mut h);
        let f = family.value(theta, k);
        let (p, pt) = (law0.p(k), law0.p_tail(k));
        for i in 0..d {
            s_g[i] += p * g[i];
            for j in 0..d {
                first[(i, j)] += (h[i * d + j] / f - g[i] * g[j] / (f * f)) * pt;
                s_h[(i, j)] += p * h[i * d + j];
            }
        }
        s_f += p * f;
    }
    Ok(first - s_h / s_f + (&s_g * s_g.transpose()) / (s_f * s_f))
}

/// The `a..f` quantities of the power-offset Hessian and the Hessian
/// assembled from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerOffsetTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct AsymptoticInfo {
    pub v0: DMatrix<f64>,
    pub v0_inv: DMatrix<f64>,
    /// Limit of the history-likelihood Hessian at the truth.
    pub hessian_limit: DMatrix<f64>,
    /// Present for the power-offset family.
    pub power_offset: Option<PowerOffsetTerms>,
    pub truncation_k: usize,
    pub truncation_error_bound: f64,
}

/// Moments `sum_k P_k m(k)` of `m = [g, g g^T, hess f / f]` with
/// `g = grad f / f` and `P_k = p_{>k}`.
struct Moments {
    w: f64,
    g: DVector<f64>,
    gg: DMatrix<f64>,
    hf: DMatrix<f64>,
}

fn moment_vector(family: &PaFamily, theta: &[f64], x: f64) -> Vec<f64> {
    let d = family.dim();
    let mut g = vec![0.0; d];
    let f = grad_over_f(family, theta, x, &mut g);
    let mut h = vec![0.0; d * d];
    family.hessian_at(theta, x, &mut h);
    let mut out = Vec::with_capacity(1 + d + 2 * d * d);
    out.push(1.0);
    out.extend_from_slice(&g);
    for i in 0..d {
        for j in 0..d {
            out.push(g[i] * g[j]);
        }
    }
    out.extend(h.iter().map(|v| v / f));
    out
}

impl Moments {
    fn from_vec(d: usize, v: &[f64]) -> Self {
        Self {
            w: v[0],
            g: DVector::from_column_slice(&v[1..1 + d]),
            gg: DMatrix::from_row_slice(d, d, &v[1 + d..1 + d + d * d]),
            hf: DMatrix::from_row_slice(d, d, &v[1 + d + d * d..]),
        }
    }
}

fn accumulate(acc: &mut [f64], w: f64, v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
}

/// Sums for a strictly sublinear law, extending the truncation point until
/// the estimated remainder is below the target.
fn sublinear_moments(family: &PaFamily, theta: &[f64], law0: &LimitLaw) -> Result<(Vec<f64>, usize, f64)> {
    let d = family.dim();
    let mut law = law0.clone();
    let mut g = vec![0.0; d];
    let mut bound;
    let mut rounds = 0;
    loop {
        let k = law.k_trunc();
        let rest = series_tail(family, theta, law.lambda_star, k, law.tail_mass, 1e-18)?;
        grad_over_f(family, theta, (2 * k) as f64, &mut g);
        let gmax = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        bound = gmax * gmax * rest;
        if bound < V0_TAIL_TOL || rounds >= 6 {
            break;
        }
        law = law_at(family, theta, law.lambda_star, law.tail_mass * 1e-3)?;
        rounds += 1;
    }
    let len = 1 + d + 2 * d * d;
    let mut acc = vec![0.0; len];
    for k in 1..=law.k_trunc() {
        accumulate(&mut acc, law.p_tail(k), &moment_vector(family, theta, k as f64));
    }
    Ok((acc, law.k_trunc(), bound))
}

/// Sums for an affine law: explicit terms, then the tail with
/// `P_k ~ C (k + c)^{-(2 + alpha)}`, `c = 3(1 + alpha)/2`, matched at the
/// last explicit term and integrated from `K + 1/2`.
fn affine_moments(family: &PaFamily, theta: &[f64], alpha: f64) -> Result<(Vec<f64>, usize, f64)> {
    let d = family.dim();
    let len = 1 + d + 2 * d * d;
    let lambda = 2.0 + alpha;
    let mut acc = vec![0.0; len];
    let mut p = 1.0;
    let mut p_half = 0.0;
    let kmax = AFFINE_EXPLICIT_TERMS;
    for k in 1..=kmax {
        let f = k as f64 + alpha;
        p *= f / (lambda + f);
        if k == kmax / 2 {
            p_half = p;
        }
        accumulate(&mut acc, p, &moment_vector(family, theta, k as f64));
    }
    let s = 2.0 + alpha;
    let c = 1.5 * (1.0 + alpha);
    let kf = kmax as f64;
    let scale = p * (kf + c).powf(s);
    let mismatch = (scale * (0.5 * kf + c).powf(-s) / p_half - 1.0).abs();
    // x = e^u - c keeps the integrand's decay exponential in u.
    let u0 = (kf + 0.5 + c).ln();
    let integrand = |u: f64| -> Vec<f64> {
        let xc = u.exp();
        if !xc.is_finite() {
            return vec![0.0; len];
        }
        let dens = scale * (-(s - 1.0) * u).exp();
        let mut v = moment_vector(family, theta, xc - c);
        v.iter_mut().for_each(|t| *t *= dens);
        v
    };
    let tail = integrate_to_infinity(&integrand, u0, 1.0, 1e-13)?;
    let tail_size = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    accumulate(&mut acc, 1.0, &tail);
    Ok((acc, kmax, mismatch * tail_size + 1e-13))
}

/// Information matrix `V0` and related limits at `theta0`.
pub fn fisher_v0(family: &PaFamily, theta0: &[f64], law0: &LimitLaw) -> Result<AsymptoticInfo> {
    let class = family.class(theta0)?;
    let d = family.dim();
    let (acc, truncation_k, truncation_error_bound) = match class {
        GrowthClass::Affine { alpha } => affine_moments(family, theta0, alpha)?,
        GrowthClass::StrictlySublinear { .. } => sublinear_moments(family, theta0, law0)?,
    };
    let m = Moments::from_vec(d, &acc);
    let v0 = &m.gg - &m.g * m.g.transpose();
    let v0 = (&v0 + v0.transpose()) * 0.5;
    let hessian_limit = (&m.hf - &m.gg) - &m.hf / m.w + (&m.g * m.g.transpose()) / (m.w * m.w);
    let sym = v0.clone().symmetric_eigen();
    if sym.eigenvalues.iter().any(|e| !(*e > 0.0)) {
        return Err(PaError::Degenerate(format!(
            "information matrix is not positive definite (eigenvalues {:?})",
            sym.eigenvalues.as_slice()
        )));
    }
    let v0_inv = v0
        .clone()
        .cholesky()
        .ok_or_else(|| PaError::Degenerate("information matrix is singular".into()))?
        .inverse();
    let power_offset = matches!(family.kind(), FamilyKind::PowerOffset).then(|| {
        let lambda = law0.lambda_star;
        let a = lambda * m.w;
        let b = lambda * m.gg[(0, 0)];
        let c = lambda * m.g[0];
        let dd = lambda * m.gg[(0, 1)];
        let e = lambda * m.g[1];
        let f = lambda * m.gg[(1, 1)];
        let hessian =
            DMatrix::from_row_slice(2, 2, &[a * b - c * c, a * dd - c * e, a * dd - c * e, a * f - e * e]) / (-(a * a));
        PowerOffsetTerms {
            a,
            b,
            c,
            d: dd,
            e,
            f,
            hessian,
        }
    });
    Ok(AsymptoticInfo {
        v0,
        v0_inv,
        hessian_limit,
        power_offset,
        truncation_k,
        truncation_error_bound,
    })
}

/// [`fisher_v0`] with the limit law computed internally.
pub fn asymptotic_info(family: &PaFamily, theta0: &[f64]) -> Result<AsymptoticInfo> {
    let law = match family.class(theta0)? {
        // Only the Malthusian parameter is used for affine laws.
        GrowthClass::Affine { alpha } => law_at(family, theta0, 2.0 + alpha, 1e-3)?,
        _ => limit_law(family, theta0, DEFAULT_TAIL_TOL)?,
    };
    fisher_v0(family, theta0, &law)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// Variance entry used to standardize the statistic.
    pub variance_entry: f64,
}

impl WaldReport {
    pub fn report(&self) -> String {
        format!(
            "statistic      = {:.6}\ncritical_value = {:.6}\nreject         = {}\nvariance_entry = {:.6}\n",
            self.statistic, self.critical_value, self.reject, self.variance_entry
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{},{:?}",
            self.statistic, self.critical_value, self.reject, self.variance_entry
        )
    }
}

/// Wald test of `beta = 1` in `(k + alpha)^beta`, rejecting for small
/// statistics at nominal `size`.
pub fn wald_affinity(family: &PaFamily, alpha_hat: f64, beta_hat: f64, n: usize, size: f64) -> Result<WaldReport> {
    if !matches!(family.kind(), FamilyKind::PowerOffset) {
        return Err(PaError::domain("the affinity test needs the power-offset family"));
    }
    if n < 2 {
        return Err(PaError::domain("need n >= 2"));
    }
    if !(size > 0.0 && size < 0.5) {
        return Err(PaError::domain("size must lie in (0, 0.5)"));
    }
    let info = asymptotic_info(family, &[alpha_hat, 1.0])?;
    let var = info.v0_inv[(1, 1)];
    if !(var.is_finite() && var > 0.0) {
        return Err(PaError::Degenerate(format!("variance entry {var}")));
    }
    let statistic = (n as f64).sqrt() * (beta_hat - 1.0) / var.sqrt();
    let critical_value = normal_quantile(size);
    Ok(WaldReport {
        statistic,
        critical_value,
        reject: statistic < critical_value,
        variance_entry: var,
    })
}

/// One draw of `W 1{W <= 0}` with `W ~ N(0, a^T V0^{-1} V V0^{-1} a)`.
pub fn boundary_limit_sample(a: &DVector<f64>, v: &DMatrix<f64>, v0: &DMatrix<f64>, rng: &mut PaRng) -> Result<f64> {
    let sigma = boundary_limit_sd(a, v, v0)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok((sigma * z).min(0.0))
}

/// Standard deviation of `W` in [`boundary_limit_sample`].
pub fn boundary_limit_sd(a: &DVector<f64>, v: &DMatrix<f64>, v0: &DMatrix<f64>) -> Result<f64> {
    if v.clone().cholesky().is_none() || v0.clone().cholesky().is_none() {
        return Err(PaError::domain("V and V0 must be positive definite"));
    }
    let v0_inv = v0.clone().cholesky().expect("checked").inverse();
    let u = &v0_inv * a;
    let var = (u.transpose() * v * &u)[(0, 0)];
    Ok(var.max(0.0).sqrt())
}

#[derive(Debug, Clone)]
pub struct BootstrapVariance {
    pub sigma_tilde: DMatrix<f64>,
    pub m: usize,
    pub s: usize,
    /// Replicates whose fit failed and were left out.
    pub dropped: usize,
    /// SHA-256 over the master seed and replicate indices, hex.
    pub seeds_digest: String,
    pub estimates: Vec<Vec<f64>>,
}

impl BootstrapVariance {
    pub fn report(&self) -> String {
        let d = self.sigma_tilde.nrows();
        let mut out = format!(
            "m = {}\ns = {}\ndropped = {}\nseeds = {}\n",
            self.m, self.s, self.dropped, self.seeds_digest
        );
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format!("{:.6}", self.sigma_tilde[(i, j)])).collect();
            out.push_str(&format!("sigma[{i}] = [{}]\n", row.join(", ")));
        }
        out
    }
}

/// `m { mean(theta theta^T) - mean(theta) mean(theta)^T }`.
pub fn bootstrap_covariance(estimates: &[Vec<f64>], m: usize) -> DMatrix<f64> {
    let d = estimates.first().map_or(0, |e| e.len());
    let s = estimates.len() as f64;
    let mut second = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    for e in estimates {
        let v = DVector::from_column_slice(e);
        second += &v * v.transpose();
        mean += v;
    }
    second /= s;
    mean /= s;
    let cov = (second - &mean * mean.transpose()) * m as f64;
    (&cov + cov.transpose()) * 0.5
}

/// Parametric bootstrap of the pseudo-likelihood estimator: `s` trees of
/// `m` nodes under `f_theta_tilde`, refitted.
pub fn bootstrap_variance(
    family: &PaFamily,
    theta_tilde: &[f64],
    m: usize,
    s: usize,
    seed: u64,
) -> Result<BootstrapVariance> {
    if m < 10 || s < 2 {
        return Err(PaError::domain("bootstrap needs m >= 10 and s >= 2"));
    }
    family.check_theta(theta_tilde)?;
    let fits: Vec<Option<Vec<f64>>> = (0..s)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let tree = grow_with(family, theta_tilde, m, &mut rng, GrowOptions::default()).ok()?;
            let fit = fit_pmle(family, &tree.snapshot, Some(theta_tilde)).ok()?;
            fit.converged.then_some(fit.theta_hat)
        })
        .collect();
    let dropped = fits.iter().filter(|f| f.is_none()).count();
    if dropped > 0 {
        log::warn!("bootstrap: {dropped} of {s} replicate fits failed and were dropped");
    }
    if dropped * 10 > s {
        return Err(PaError::Procedure(format!("{dropped} of {s} bootstrap fits failed")));
    }
    let estimates: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((s as u64).to_le_bytes());
    hasher.update((m as u64).to_le_bytes());
    let digest: String = hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
    Ok(BootstrapVariance {
        sigma_tilde: bootstrap_covariance(&estimates, m),
        m,
        s,
        dropped,
        seeds_digest: digest,
        estimates,
    })
}

/// Two-sided test of `theta[coordinate] = null_value` with the bootstrap
/// variance entry.
pub fn bootstrap_wald(
    theta_tilde: &[f64],
    sigma_tilde: &DMatrix<f64>,
    coordinate: usize,
    null_value: f64,
    n: usize,
    size: f64,
) -> Result<WaldReport> {
    if coordinate >= theta_tilde.len() || coordinate >= sigma_tilde.nrows() {
        return Err(PaError::domain("coordinate out of range"));
    }
    let var = sigma_tilde[(coordinate, coordinate)];
    if !(var.is_finite() && var > 0.0) {
        return Err(PaError::Degenerate(format!("bootstrap variance entry {var}")));
    }
    let statistic = (n as f64).sqrt() * (theta_tilde[coordinate] - null_value) / var.sqrt();
    let critical_value = normal_quantile(1.0 - size / 2.0);
    Ok(WaldReport {
        statistic,
        critical_value,
        reject: statistic.abs() > critical_value,
        variance_entry: var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_constants() {
        assert_abs_diff_eq!(normal_quantile(0.95), Z_0_05, epsilon = 1e-6);
        assert_abs_diff_eq!(normal_quantile(0.975), Z_0_025, epsilon = 1e-6);
    }

    #[test]
    fn wald_decisions() {
        let fam = PaFamily::power_offset();
        let r = wald_affinity(&fam, 2.0, 1.0, 1000, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);
        let b = bootstrap_wald(&[0.3, 0.5], &DMatrix::identity(2, 2), 0, 0.3, 100, 0.05).unwrap();
        assert!(!b.reject && b.statistic == 0.0);
        let b = bootstrap_wald(&[0.25, 0.5], &DMatrix::identity(2, 2), 0, 0.0, 100, 0.05).unwrap();
        assert_abs_diff_eq!(b.statistic, 2.5, epsilon = 1e-12);
        assert!(b.reject);
        assert!(bootstrap_wald(&[0.25], &DMatrix::zeros(1, 1), 0, 0.0, 100, 0.05).is_err());
    }

    #[test]
    fn bootstrap_formula() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert_eq!(bootstrap_covariance(&same, 100), DMatrix::zeros(2, 2));
        // s = 2, m = 1: half the outer product of the difference, over 2.
        let c = bootstrap_covariance(&[vec![1.0, 0.0], vec![3.0, 4.0]], 1);
        assert_abs_diff_eq!(c[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(0, 1)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 1)], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn boundary_sample_moments() {
        let v0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = DVector::from_vec(vec![0.0, 1.0]);
        let sd = boundary_limit_sd(&a, &v0, &v0).unwrap();
        let inv = v0.clone().try_inverse().unwrap();
        assert_abs_diff_eq!(sd * sd, inv[(1, 1)], epsilon = 1e-12);
        let mut rng = rng_from_seed(4);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| boundary_limit_sample(&a, &v0, &v0, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean + sd / (2.0 * std::f64::consts::PI).sqrt()).abs() < 3.0 * se);
        let zero = DVector::zeros(2);
        assert_eq!(boundary_limit_sample(&zero, &v0, &v0, &mut rng).unwrap(), 0.0);
        assert!(boundary_limit_sample(&a, &DMatrix::zeros(2, 2), &v0, &mut rng).is_err());
    }

    #[test]
    fn information_matches_negative_hessian() {
        let fam = PaFamily::power_offset();
        for theta in [[0.0, 2.0 / 3.0], [4.0, 0.8], [2.0, 1.0]] {
            let info = asymptotic_info(&fam, &theta).unwrap();
            let po = info.power_offset.as_ref().unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(info.hessian_limit[(i, j)], -info.v0[(i, j)], epsilon = 1e-8);
                    assert_abs_diff_eq!(po.hessian[(i, j)], -info.v0[(i, j)], epsilon = 1e-8);
                }
            }
            assert!(po.a * po.b - po.c * po.c > 0.0);
            assert!(po.a * po.f - po.e * po.e > 0.0);
            assert!(po.b * po.f - po.d * po.d > 0.0);
            assert!(info.v0.determinant() > 0.0);
        }
    }
}
