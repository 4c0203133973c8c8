//! Laplace transform of the reproduction function, the Malthusian
//! parameter, and the limiting degree law.
//!
//! With `P_l(lambda) = prod_{k<=l} f(k) / (lambda + f(k))` we have
//! `rho(lambda) = sum_{l>=1} P_l`, `p_k = P_{k-1} - P_k` and `p_{>k} = P_k`.

use std::io::Write;

use crate::error::{PaError, Result};
use crate::model::{GrowthClass, PaFamily};

/// Default truncation level for limit laws used in analytic work.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Largest degree a truncated law may reach.
pub const MAX_TRUNCATION: usize = 20_000_000;

const MAX_BRACKET_STEPS: usize = 200;

/// `rho_f(lambda)` with absolute error at most `tol`.
pub fn rho(family: &PaFamily, theta: &[f64], lambda: f64, tol: f64) -> Result<f64> {
    let class = family.class(theta)?;
    check_lambda(class, lambda)?;
    if !(tol > 0.0) {
        return Err(PaError::domain("tolerance must be positive"));
    }
    if let GrowthClass::Affine { alpha } = class {
        return Ok((1.0 + alpha) / (lambda - 1.0));
    }
    series_tail(family, theta, lambda, 0, 1.0, tol)
}

fn check_lambda(class: GrowthClass, lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(PaError::domain(format!("lambda = {lambda} must be positive")));
    }
    if matches!(class, GrowthClass::Affine { .. }) && lambda <= 1.0 {
        return Err(PaError::domain(format!(
            "transform diverges for affine f at lambda = {lambda} <= 1"
        )));
    }
    Ok(())
}

/// `sum_{l > start} P_l` given `P_start`, to absolute accuracy `tol`.
///
/// Terms are summed explicitly until a certified bound on the remainder
/// drops below `tol`.
pub(crate) fn series_tail(
    family: &PaFamily,
    theta: &[f64],
    lambda: f64,
    start: usize,
    p_start: f64,
    tol: f64,
) -> Result<f64> {
    if let Some(GrowthClass::Affine { alpha }) = family.class(theta).ok() {
        let k = start as f64;
        return Ok(p_start * (k + 1.0 + alpha) / (lambda - 1.0));
    }
    let mut sum = 0.0;
    let mut p = p_start;
    let mut l = start;
    let mut next_check = start + 1;
    loop {
        if l >= next_check || p == 0.0 {
            let bound = remainder_bound(family, theta, lambda, l, p);
            if bound <= tol {
                return Ok(sum + 0.5 * bound.min(p));
            }
            next_check = l + (l / 4).max(32);
        }
        if l >= MAX_TRUNCATION {
            return Err(PaError::Truncation(format!(
                "series for rho at lambda = {lambda} not resolved within {MAX_TRUNCATION} terms"
            )));
        }
        l += 1;
        let f = family.value(theta, l);
        p *= f / (lambda + f);
        sum += p;
    }
}

/// Upper bound on `sum_{l > L} P_l` given `P_L`.
///
/// Ratios `f(l)/(lambda + f(l))` are non-decreasing in `l`, so on a block
/// `(L, L']` they are dominated by the ratio at `L'`. Blocks double until the
/// running product bound underflows.
fn remainder_bound(family: &PaFamily, theta: &[f64], lambda: f64, start: usize, p_start: f64) -> f64 {
    if p_start == 0.0 {
        return 0.0;
    }
    if let Some(sup) = family.sup_value(theta) {
        let r = sup / (lambda + sup);
        return p_start * r / (1.0 - r);
    }
    let mut u = p_start;
    let mut total = 0.0;
    let mut from = start as f64;
    let mut len = from.max(16.0);
    for _ in 0..400 {
        let to = from + len;
        let f = family.value_at(theta, to);
        let r = f / (lambda + f);
        if !(r < 1.0) {
            return f64::INFINITY;
        }
        let rl = r.powf(len);
        total += u * r * (1.0 - rl) / (1.0 - r);
        u *= rl;
        if u < 1e-300 {
            return total;
        }
        from = to;
        len *= 2.0;
    }
    f64::INFINITY
}

/// The Malthusian parameter: the root of `rho(lambda) = 1`.
pub fn malthusian(family: &PaFamily, theta: &[f64], tol: f64) -> Result<f64> {
    let class = family.class(theta)?;
    if let GrowthClass::Affine { alpha } = class {
        return Ok(2.0 + alpha);
    }
    let series_tol = (tol * 0.1).min(1e-14);
    let r = |lambda: f64| rho(family, theta, lambda, series_tol);

    let mut hi = 1.0;
    let mut steps = 0;
    while r(hi)? >= 1.0 {
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BRACKET_STEPS {
            return Err(PaError::convergence(
                "no upper bracket for the Malthusian parameter",
                None,
                None,
            ));
        }
    }
    let mut lo = hi * 0.5;
    steps = 0;
    while r(lo)? <= 1.0 {
        lo *= 0.5;
        steps += 1;
        if steps > MAX_BRACKET_STEPS {
            return Err(PaError::convergence(
                "no lower bracket for the Malthusian parameter",
                None,
                None,
            ));
        }
    }

    let mut best = (f64::INFINITY, lo);
    for _ in 0..MAX_BRACKET_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = r(mid)? - 1.0;
        if v.abs() < best.0 {
            best = (v.abs(), mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > tol {
        return Err(PaError::convergence(
            format!("|rho - 1| = {:e} exceeds tolerance {tol:e}", best.0),
            Some(vec![best.1]),
            Some(best.0),
        ));
    }
    Ok(best.1)
}

/// Truncated limiting degree law.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLaw {
    pub lambda_star: f64,
    /// `p_1..p_K`.
    pub probs: Vec<f64>,
    /// `p_{>1}..p_{>K}`.
    pub tails: Vec<f64>,
    /// `p_{>K}`, the mass beyond the truncation point.
    pub tail_mass: f64,
    /// `sum_j f(j) p_j`, including the truncated part.
    pub mean_preference: f64,
}

impl LimitLaw {
    pub fn k_trunc(&self) -> usize {
        self.probs.len()
    }

    /// `p_k`, or 0 past truncation.
    pub fn p(&self, k: usize) -> f64 {
        self.probs.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// `p_{>k}`; `k = 0` gives 1.
    pub fn p_tail(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.tails.get(k - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# lambda_star={:?}", self.lambda_star)?;
        writeln!(w, "# tail_mass={:?}", self.tail_mass)?;
        writeln!(w, "k,p_k")?;
        for (i, p) in self.probs.iter().enumerate() {
            writeln!(w, "{},{:?}", i + 1, p)?;
        }
        Ok(())
    }
}

/// Limiting degree law truncated at the first `K` with `p_{>K} <= tail_tol`.
pub fn limit_law(family: &PaFamily, theta: &[f64], tail_tol: f64) -> Result<LimitLaw> {
    let lambda = malthusian(family, theta, 1e-12)?;
    law_at(family, theta, lambda, tail_tol)
}

pub(crate) fn law_at(family: &PaFamily, theta: &[f64], lambda: f64, tail_tol: f64) -> Result<LimitLaw> {
    if !(tail_tol > 0.0) {
        return Err(PaError::domain("tail tolerance must be positive"));
    }
    let mut probs = Vec::new();
    let mut tails = Vec::new();
    let mut prev = 1.0;
    let mut head_pref = 0.0;
    let mut k = 0;
    while k == 0 || prev > tail_tol {
        if k >= MAX_TRUNCATION {
            return Err(PaError::Truncation(format!(
                "p_{{>K}} still above {tail_tol:e} at K = {MAX_TRUNCATION}"
            )));
        }
        k += 1;
        let f = family.value(theta, k);
        let p = prev * lambda / (lambda + f);
        let next = prev * f / (lambda + f);
        head_pref += f * p;
        probs.push(p);
        tails.push(next);
        prev = next;
    }
    let rest = series_tail(family, theta, lambda, k, prev, 1e-15)?;
    Ok(LimitLaw {
        lambda_star: lambda,
        probs,
        tails,
        tail_mass: prev,
        mean_preference: head_pref + lambda * rest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat() -> PaFamily {
        PaFamily::eventually_constant(1).unwrap()
    }

    #[test]
    fn rho_closed_forms() {
        assert_abs_diff_eq!(
            rho(&PaFamily::affine(), &[0.0], 2.0, 1e-12).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            rho(&PaFamily::affine(), &[2.0], 4.0, 1e-12).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(rho(&flat(), &[1.0], 1.0, 1e-13).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(rho(&flat(), &[1.0], 0.25, 1e-13).unwrap(), 4.0, epsilon = 1e-12);
        assert!(matches!(
            rho(&PaFamily::affine(), &[0.0], 1.0, 1e-9),
            Err(PaError::Domain(_))
        ));
        // Affine as a power-offset member takes the same closed form.
        assert_abs_diff_eq!(
            rho(&PaFamily::power_offset(), &[2.0, 1.0], 4.0, 1e-12).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rho_series_matches_brute_force() {
        let fam = PaFamily::power_offset();
        let theta = [0.0, 2.0 / 3.0];
        for lambda in [0.8, 1.5, 3.0] {
            let mut p = 1.0;
            let mut s = 0.0;
            for l in 1..2_000_000 {
                let f = fam.value(&theta, l);
                p *= f / (lambda + f);
                s += p;
                if p < 1e-20 {
                    break;
                }
            }
            assert_abs_diff_eq!(rho(&fam, &theta, lambda, 1e-13).unwrap(), s, epsilon = 1e-11);
        }
    }

    #[test]
    fn affine_tail_closed_form() {
        let fam = PaFamily::affine();
        let alpha = 0.7;
        let lambda = 3.1;
        let mut p = 1.0;
        let mut ps = vec![];
        for l in 1..=4_000_000usize {
            let f = l as f64 + alpha;
            p *= f / (lambda + f);
            ps.push(p);
        }
        let k = 5;
        let direct: f64 = ps[k..].iter().sum();
        let formula = series_tail(&fam, &[alpha], lambda, k, ps[k - 1], 1e-15).unwrap();
        assert_abs_diff_eq!(direct, formula, epsilon = 1e-6);
    }

    #[test]
    fn malthusian_values() {
        for alpha in [-0.5, 0.0, 2.0] {
            assert_eq!(malthusian(&PaFamily::affine(), &[alpha], 1e-12).unwrap(), 2.0 + alpha);
        }
        assert_abs_diff_eq!(malthusian(&flat(), &[1.0], 1e-12).unwrap(), 1.0, epsilon = 1e-12);
        // Frozen from a 30-digit root of the series.
        let fam = PaFamily::power_offset();
        let lam = malthusian(&fam, &[0.0, 2.0 / 3.0], 1e-12).unwrap();
        assert_abs_diff_eq!(lam, 1.486_749_198_052_308_1, epsilon = 1e-11);
        assert_abs_diff_eq!(rho(&fam, &[0.0, 2.0 / 3.0], lam, 1e-14).unwrap(), 1.0, epsilon = 1e-12);
        let lam = malthusian(&fam, &[4.0, 0.8], 1e-12).unwrap();
        assert_abs_diff_eq!(lam, 4.172_840_087_540_863_7, epsilon = 1e-11);
    }

    #[test]
    fn laws() {
        let law = limit_law(&PaFamily::affine(), &[0.0], 1e-12).unwrap();
        for k in 1..=20 {
            let kf = k as f64;
            assert_abs_diff_eq!(law.p(k), 4.0 / (kf * (kf + 1.0) * (kf + 2.0)), epsilon = 1e-14);
        }
        let law = limit_law(&flat(), &[1.0], 1e-12).unwrap();
        for k in 1..=30 {
            assert_abs_diff_eq!(law.p(k), 0.5f64.powi(k as i32), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(law.mean_preference, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn law_identities_all_kinds() {
        let cases: Vec<(PaFamily, Vec<f64>)> = vec![
            (PaFamily::power_offset(), vec![0.0, 2.0 / 3.0]),
            (PaFamily::power_offset(), vec![4.0, 0.8]),
            (PaFamily::power_offset(), vec![2.0, 1.0]),
            (PaFamily::log_power(1.0).unwrap(), vec![1.5]),
            (PaFamily::eventually_constant(4).unwrap(), vec![1.0, 2.0, 2.5, 3.0]),
        ];
        for (fam, theta) in cases {
            let law = limit_law(&fam, &theta, 1e-12).unwrap();
            let total: f64 = law.probs.iter().sum::<f64>() + law.tail_mass;
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(law.mean_preference, law.lambda_star, epsilon = 1e-9);
            for k in 1..=law.k_trunc() {
                let f = fam.value(&theta, k);
                assert!(law.p(k) > 0.0);
                assert_abs_diff_eq!(law.p_tail(k), f * law.p(k) / law.mean_preference, epsilon = 1e-9);
            }
            assert!(law.tail_mass <= 1e-12);
        }
    }

    #[test]
    fn rho_is_decreasing() {
        let fam = PaFamily::log_power(1.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..40 {
            let v = rho(&fam, &[2.0], 0.1 * i as f64, 1e-13).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn csv_header() {
        let law = limit_law(&flat(), &[1.0], 1e-3).unwrap();
        let mut buf = Vec::new();
        law.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# lambda_star="));
        assert!(text.contains("k,p_k\n1,0.5"));
    }
}
