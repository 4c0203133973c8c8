//! Small statistical checks used by the experiment harness.

use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{PaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > x) = 2 sum_j (-1)^{j-1} exp(-2 j^2 x^2)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * x * x).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// p-value with the small-sample correction `x = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) D`.
fn ks_p_value(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_tail((s + 0.12 + 0.11 / s) * d)
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PaError::domain("sample contains non-finite values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample Kolmogorov-Smirnov test against a continuous `cdf`.
pub fn ks_one_sample(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if values.is_empty() {
        return Err(PaError::InsufficientData("empty sample".into()));
    }
    let v = sorted_finite(values)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    })
}

/// One-sample test against the standard normal.
pub fn ks_normal(values: &[f64]) -> Result<KsResult> {
    let z = Normal::standard();
    ks_one_sample(values, |x| z.cdf(x))
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(PaError::InsufficientData("empty sample".into()));
    }
    let a = sorted_finite(a)?;
    let b = sorted_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    })
}

/// Asymptotic critical value of the one-sample statistic at level `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Clopper-Pearson interval for a binomial proportion.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials || !(level > 0.0 && level < 1.0) {
        return Err(PaError::domain(
            "need 0 <= successes <= trials, trials > 0 and level in (0, 1)",
        ));
    }
    let tail = (1.0 - level) / 2.0;
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .map_err(|e| PaError::Numeric(e.to_string()))?
            .inverse_cdf(tail)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .map_err(|e| PaError::Numeric(e.to_string()))?
            .inverse_cdf(1.0 - tail)
    };
    Ok((lo, hi))
}

/// Central interval `[q_{(1-level)/2}, q_{(1+level)/2}] / trials` of the
/// Binomial(`trials`, `p`) proportion.
pub fn binomial_interval(p: f64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || !(0.0..=1.0).contains(&p) || !(level > 0.0 && level < 1.0) {
        return Err(PaError::domain("need p in [0, 1], trials > 0 and level in (0, 1)"));
    }
    let b = Binomial::new(p, trials).map_err(|e| PaError::Numeric(e.to_string()))?;
    let tail = (1.0 - level) / 2.0;
    let lo = b.inverse_cdf(tail);
    let hi = b.inverse_cdf(1.0 - tail);
    Ok((lo as f64 / trials as f64, hi as f64 / trials as f64))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(PaError::domain("need two samples of equal length >= 2"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PaError::Degenerate("zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        // Standard table values of the limiting distribution.
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 1e-4);
        assert!((ks_critical_value(100, 0.05) - 0.13581).abs() < 1e-4);
    }

    #[test]
    fn ks_on_exact_quantiles() {
        let z = Normal::standard();
        let n = 200;
        let v: Vec<f64> = (1..=n).map(|i| z.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();
        let r = ks_normal(&v).unwrap();
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-9, "{}", r.statistic);
        assert!(r.p_value > 0.99);
        let shifted: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
        assert!(ks_normal(&shifted).unwrap().p_value < 1e-6);
    }

    #[test]
    fn two_sample() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert!((r.statistic - 0.01).abs() < 1e-12 && r.p_value > 0.99);
        let c: Vec<f64> = (0..100).map(|i| i as f64 + 50.0).collect();
        let r = ks_two_sample(&a, &c).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-12 && r.p_value < 1e-8);
    }

    #[test]
    fn binomial_intervals() {
        let (lo, hi) = clopper_pearson(10, 200, 0.95).unwrap();
        // Reference values from scipy.stats.beta.ppf.
        assert!(
            (lo - 0.024_234_165).abs() < 1e-7 && (hi - 0.090_027_538).abs() < 1e-7,
            "{lo} {hi}"
        );
        assert_eq!(clopper_pearson(0, 10, 0.95).unwrap().0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.95).unwrap().1, 1.0);
        let (lo, hi) = binomial_interval(0.05, 200, 0.95).unwrap();
        assert!(lo <= 0.05 && hi >= 0.05 && lo > 0.0 && hi < 0.1, "{lo} {hi}");
    }

    #[test]
    fn correlation() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
