//! Parametric preferential-attachment functions.
//!
//! A [`PaFamily`] couples one of four functional forms with a closed
//! parameter box. The parameter vector `theta` is always passed alongside the
//! family so that one family value can be evaluated at many points.
//!
//! | kind                  | theta            | f_theta(k)                 |
//! |-----------------------|------------------|----------------------------|
//! | `PowerOffset`         | (alpha, beta)    | (k + alpha)^beta           |
//! | `Affine`              | (alpha)          | k + alpha                  |
//! | `LogPower { shift }`  | (beta)           | ln(k + shift)^beta         |
//! | `EventuallyConstant`  | (f(1), .., f(K)) | f(min(k, K))               |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PaError, Result};

/// Offset used for the default boxes, `[-1 + EPS, 1 / EPS]` for offsets.
pub const DEFAULT_BOX_EPS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    PowerOffset,
    Affine,
    LogPower { shift: f64 },
    EventuallyConstant { cutoff: usize },
}

impl FamilyKind {
    pub fn dim(&self) -> usize {
        match self {
            FamilyKind::PowerOffset => 2,
            FamilyKind::Affine | FamilyKind::LogPower { .. } => 1,
            FamilyKind::EventuallyConstant { cutoff } => *cutoff,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::PowerOffset => "power-offset",
            FamilyKind::Affine => "affine",
            FamilyKind::LogPower { .. } => "log-power",
            FamilyKind::EventuallyConstant { .. } => "eventually-constant",
        }
    }
}

/// Closed per-coordinate parameter bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(PaError::domain("box bounds have different lengths"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(PaError::domain(format!("invalid bound [{lo}, {hi}] on coordinate {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| t.clamp(*lo, *hi))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// The two admissible growth regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthClass {
    /// `f(k) <= C k^beta` with `beta < 1`; `bounded` when `f` is eventually constant.
    StrictlySublinear { bounded: bool },
    /// `f(k) = k + alpha`.
    Affine { alpha: f64 },
}

/// A parametric PA family together with its parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct PaFamily {
    kind: FamilyKind,
    bounds: ParamBox,
}

impl PaFamily {
    pub fn new(kind: FamilyKind, bounds: ParamBox) -> Result<Self> {
        if bounds.dim() != kind.dim() {
            return Err(PaError::domain(format!(
                "{} family has dimension {}, box has {}",
                kind.name(),
                kind.dim(),
                bounds.dim()
            )));
        }
        match &kind {
            FamilyKind::PowerOffset => {
                if bounds.lower[0] <= -1.0 {
                    return Err(PaError::domain("offset lower bound must exceed -1"));
                }
                if bounds.lower[1] < 0.0 || bounds.upper[1] > 1.0 {
                    return Err(PaError::domain("exponent bounds must lie in [0, 1]"));
                }
            }
            FamilyKind::Affine => {
                if bounds.lower[0] <= -1.0 {
                    return Err(PaError::domain("offset lower bound must exceed -1"));
                }
            }
            FamilyKind::LogPower { shift } => {
                if !(*shift > 0.0) || !shift.is_finite() {
                    return Err(PaError::domain("log-power shift must be positive"));
                }
                if bounds.lower[0] <= 0.0 {
                    return Err(PaError::domain("log-power exponent must be positive"));
                }
            }
            FamilyKind::EventuallyConstant { cutoff } => {
                if *cutoff == 0 {
                    return Err(PaError::domain("cutoff must be positive"));
                }
                if bounds.lower.iter().any(|lo| *lo <= 0.0) {
                    return Err(PaError::domain(
                        "eventually-constant values must be bounded away from 0",
                    ));
                }
            }
        }
        Ok(Self { kind, bounds })
    }

    /// `(k + alpha)^beta` on `[-1 + eps, 1/eps] x [0, 1]`.
    pub fn power_offset() -> Self {
        let eps = DEFAULT_BOX_EPS;
        Self {
            kind: FamilyKind::PowerOffset,
            bounds: ParamBox {
                lower: vec![-1.0 + eps, 0.0],
                upper: vec![1.0 / eps, 1.0],
            },
        }
    }

    pub fn affine() -> Self {
        let eps = DEFAULT_BOX_EPS;
        Self {
            kind: FamilyKind::Affine,
            bounds: ParamBox {
                lower: vec![-1.0 + eps],
                upper: vec![1.0 / eps],
            },
        }
    }

    /// `ln(k + shift)^beta` with `beta` in `[0.05, 5]`.
    pub fn log_power(shift: f64) -> Result<Self> {
        Self::new(FamilyKind::LogPower { shift }, ParamBox::new(vec![0.05], vec![5.0])?)
    }

    /// Free values `f(1..=cutoff)` in `[1e-3, 1e3]`.
    pub fn eventually_constant(cutoff: usize) -> Result<Self> {
        Self::new(
            FamilyKind::EventuallyConstant { cutoff },
            ParamBox::new(vec![1e-3; cutoff], vec![1e3; cutoff])?,
        )
    }

    /// Same family with `f(1)` pinned to 1, which removes the scale
    /// non-identifiability of the eventually-constant kind.
    pub fn eventually_constant_normalized(cutoff: usize) -> Result<Self> {
        let mut lower = vec![1e-3; cutoff];
        let mut upper = vec![1e3; cutoff];
        lower[0] = 1.0;
        upper[0] = 1.0;
        Self::new(FamilyKind::EventuallyConstant { cutoff }, ParamBox::new(lower, upper)?)
    }

    pub fn with_bounds(self, bounds: ParamBox) -> Result<Self> {
        Self::new(self.kind, bounds)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Validates `theta` against the box and the structural invariants.
    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(PaError::domain(format!(
                "parameter has length {}, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(PaError::domain("parameter is not finite"));
        }
        if !self.bounds.contains(theta) {
            return Err(PaError::domain(format!(
                "parameter {theta:?} outside box {:?}",
                self.bounds
            )));
        }
        if let FamilyKind::EventuallyConstant { .. } = self.kind {
            if theta.windows(2).any(|w| w[1] < w[0]) {
                return Err(PaError::domain("eventually-constant values must be non-decreasing"));
            }
        }
        Ok(())
    }

    pub fn class(&self, theta: &[f64]) -> Result<GrowthClass> {
        self.check_theta(theta)?;
        Ok(match self.kind {
            FamilyKind::PowerOffset if theta[1] == 1.0 => GrowthClass::Affine { alpha: theta[0] },
            FamilyKind::PowerOffset if theta[1] == 0.0 => GrowthClass::StrictlySublinear { bounded: true },
            FamilyKind::Affine => GrowthClass::Affine { alpha: theta[0] },
            FamilyKind::EventuallyConstant { .. } => GrowthClass::StrictlySublinear { bounded: true },
            _ => GrowthClass::StrictlySublinear { bounded: false },
        })
    }

    /// Largest value of `f_theta`, when bounded.
    pub(crate) fn sup_value(&self, theta: &[f64]) -> Option<f64> {
        match self.kind {
            FamilyKind::EventuallyConstant { cutoff } => Some(theta[cutoff - 1]),
            FamilyKind::PowerOffset if theta[1] == 0.0 => Some(1.0),
            _ => None,
        }
    }

    /// `f_theta(k)`.
    pub fn eval(&self, theta: &[f64], k: usize) -> Result<f64> {
        self.check_theta(theta)?;
        check_degree(k)?;
        Ok(self.value(theta, k))
    }

    /// Gradient of `f_theta(k)` in `theta`.
    pub fn grad(&self, theta: &[f64], k: usize) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        check_degree(k)?;
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(theta, k, &mut g);
        Ok(DVector::from_vec(g))
    }

    /// Hessian of `f_theta(k)` in `theta`.
    pub fn hess(&self, theta: &[f64], k: usize) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        check_degree(k)?;
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        self.hessian_into(theta, k, &mut h);
        Ok(DMatrix::from_row_slice(d, d, &h))
    }

    /// Unchecked evaluation; `theta` must already be validated.
    pub(crate) fn value(&self, theta: &[f64], k: usize) -> f64 {
        let kf = k as f64;
        match self.kind {
            FamilyKind::PowerOffset => (kf + theta[0]).powf(theta[1]),
            FamilyKind::Affine => kf + theta[0],
            FamilyKind::LogPower { shift } => (kf + shift).ln().powf(theta[0]),
            FamilyKind::EventuallyConstant { cutoff } => theta[k.min(cutoff) - 1],
        }
    }

    /// `f_theta` at a real degree, for bounding series tails; only
    /// meaningful for `x >= 1`.
    pub(crate) fn value_at(&self, theta: &[f64], x: f64) -> f64 {
        match self.kind {
            FamilyKind::PowerOffset => (x + theta[0]).powf(theta[1]),
            FamilyKind::Affine => x + theta[0],
            FamilyKind::LogPower { shift } => (x + shift).ln().powf(theta[0]),
            FamilyKind::EventuallyConstant { cutoff } => {
                if x >= cutoff as f64 {
                    theta[cutoff - 1]
                } else {
                    theta[(x.floor() as usize).max(1) - 1]
                }
            }
        }
    }

    pub(crate) fn gradient_into(&self, theta: &[f64], k: usize, out: &mut [f64]) {
        if let FamilyKind::EventuallyConstant { cutoff } = self.kind {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k.min(cutoff) - 1] = 1.0;
        } else {
            self.gradient_at(theta, k as f64, out);
        }
    }

    /// Gradient at a real degree `x >= 1`; eventually-constant families use
    /// `floor(x)`.
    pub(crate) fn gradient_at(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        match self.kind {
            FamilyKind::PowerOffset => {
                let (alpha, beta) = (theta[0], theta[1]);
                let y = x + alpha;
                let f = y.powf(beta);
                out[0] = beta * f / y;
                out[1] = f * y.ln();
            }
            FamilyKind::Affine => out[0] = 1.0,
            FamilyKind::LogPower { shift } => {
                let l = (x + shift).ln();
                out[0] = l.powf(theta[0]) * l.ln();
            }
            FamilyKind::EventuallyConstant { .. } => self.gradient_into(theta, x.floor().max(1.0) as usize, out),
        }
    }

    /// Row-major `d x d` Hessian.
    pub(crate) fn hessian_into(&self, theta: &[f64], k: usize, out: &mut [f64]) {
        self.hessian_at(theta, k as f64, out);
    }

    pub(crate) fn hessian_at(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        match self.kind {
            FamilyKind::PowerOffset => {
                let (alpha, beta) = (theta[0], theta[1]);
                let y = x + alpha;
                let f = y.powf(beta);
                let ly = y.ln();
                out[0] = beta * (beta - 1.0) * f / (y * y);
                out[1] = f / y * (1.0 + beta * ly);
                out[2] = out[1];
                out[3] = f * ly * ly;
            }
            FamilyKind::Affine => out[0] = 0.0,
            FamilyKind::LogPower { shift } => {
                let l = (x + shift).ln();
                let ll = l.ln();
                out[0] = l.powf(theta[0]) * ll * ll;
            }
            FamilyKind::EventuallyConstant { .. } => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// Tabulates `f`, and optionally its derivatives, for degrees `1..=kmax`.
    pub fn table(&self, theta: &[f64], kmax: usize, order: DerivOrder) -> Result<PrefTable> {
        self.check_theta(theta)?;
        Ok(self.table_unchecked(theta, kmax, order))
    }

    pub(crate) fn table_unchecked(&self, theta: &[f64], kmax: usize, order: DerivOrder) -> PrefTable {
        let d = self.dim();
        let kmax = kmax.max(1);
        let mut f = Vec::with_capacity(kmax);
        let mut df = Vec::new();
        let mut d2f = Vec::new();
        if order >= DerivOrder::First {
            df.resize(kmax * d, 0.0);
        }
        if order >= DerivOrder::Second {
            d2f.resize(kmax * d * d, 0.0);
        }
        for k in 1..=kmax {
            f.push(self.value(theta, k));
            if order >= DerivOrder::First {
                self.gradient_into(theta, k, &mut df[(k - 1) * d..k * d]);
            }
            if order >= DerivOrder::Second {
                self.hessian_into(theta, k, &mut d2f[(k - 1) * d * d..k * d * d]);
            }
        }
        PrefTable { dim: d, f, df, d2f }
    }
}

fn check_degree(k: usize) -> Result<()> {
    if k == 0 {
        Err(PaError::domain("degree must be at least 1"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

/// Values and derivatives of `f_theta` at degrees `1..=kmax`.
#[derive(Debug, Clone)]
pub struct PrefTable {
    dim: usize,
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

impl PrefTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kmax(&self) -> usize {
        self.f.len()
    }

    #[inline]
    pub fn f(&self, k: usize) -> f64 {
        self.f[k - 1]
    }

    #[inline]
    pub fn df(&self, k: usize) -> &[f64] {
        &self.df[(k - 1) * self.dim..k * self.dim]
    }

    #[inline]
    pub fn d2f(&self, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.d2f[(k - 1) * dd..k * dd]
    }
}

/// Human-readable description of a family, a parameter, and its box.
///
/// ```toml
/// kind = "power_offset"
/// parameters = [0.0, 0.6666666666666666]
/// bounds = [[-0.95, 20.0], [0.0, 1.0]]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(default)]
    pub parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl FamilyConfig {
    pub fn from_family(family: &PaFamily, theta: &[f64]) -> Self {
        let bounds = family
            .bounds
            .lower
            .iter()
            .zip(&family.bounds.upper)
            .map(|(lo, hi)| [*lo, *hi])
            .collect();
        Self {
            kind: family.kind.clone(),
            parameters: theta.to_vec(),
            bounds: Some(bounds),
        }
    }

    /// Builds the family, using the default box when none is given.
    pub fn family(&self) -> Result<PaFamily> {
        let default = default_family(&self.kind)?;
        match &self.bounds {
            None => Ok(default),
            Some(b) => {
                let lower = b.iter().map(|p| p[0]).collect();
                let upper = b.iter().map(|p| p[1]).collect();
                default.with_bounds(ParamBox::new(lower, upper)?)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PaError::parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PaError::parse(e.to_string()))
    }
}

pub fn default_family(kind: &FamilyKind) -> Result<PaFamily> {
    match kind {
        FamilyKind::PowerOffset => Ok(PaFamily::power_offset()),
        FamilyKind::Affine => Ok(PaFamily::affine()),
        FamilyKind::LogPower { shift } => PaFamily::log_power(*shift),
        FamilyKind::EventuallyConstant { cutoff } => PaFamily::eventually_constant(*cutoff),
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::LogPower { shift } => write!(f, "log-power:{shift}"),
            FamilyKind::EventuallyConstant { cutoff } => write!(f, "eventually-constant:{cutoff}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `power-offset`, `affine`, `log-power[:shift]` or `eventually-constant:K`.
impl FromStr for FamilyKind {
    type Err = PaError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let name = name.trim().to_ascii_lowercase().replace('_', "-");
        match (name.as_str(), arg) {
            ("power-offset", None) => Ok(FamilyKind::PowerOffset),
            ("affine", None) => Ok(FamilyKind::Affine),
            ("log-power", None) => Ok(FamilyKind::LogPower { shift: 1.0 }),
            ("log-power", Some(a)) => a
                .trim()
                .parse()
                .map(|shift| FamilyKind::LogPower { shift })
                .map_err(|_| PaError::parse(format!("bad log-power shift '{a}'"))),
            ("eventually-constant", Some(a)) => a
                .trim()
                .parse()
                .map(|cutoff| FamilyKind::EventuallyConstant { cutoff })
                .map_err(|_| PaError::parse(format!("bad cutoff '{a}'"))),
            _ => Err(PaError::parse(format!("unknown family '{s}'"))),
        }
    }
}

/// Parses a comma-separated parameter vector.
pub fn parse_theta(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            match t.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a
                        .trim()
                        .parse()
                        .map_err(|_| PaError::parse(format!("bad number '{t}'")))?;
                    let b: f64 = b
                        .trim()
                        .parse()
                        .map_err(|_| PaError::parse(format!("bad number '{t}'")))?;
                    Ok(a / b)
                }
                None => t.parse().map_err(|_| PaError::parse(format!("bad number '{t}'"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn central_diff(family: &PaFamily, theta: &[f64], k: usize, i: usize, h: f64) -> f64 {
        let mut p = theta.to_vec();
        let mut m = theta.to_vec();
        p[i] += h;
        m[i] -= h;
        (family.value(&p, k) - family.value(&m, k)) / (2.0 * h)
    }

    #[test]
    fn power_offset_values() {
        let fam = PaFamily::power_offset();
        assert_relative_eq!(fam.eval(&[0.0, 2.0 / 3.0], 8).unwrap(), 4.0, epsilon = 1e-14);
        // 5^0.8 frozen from a 30-digit evaluation.
        assert_relative_eq!(
            fam.eval(&[4.0, 0.8], 1).unwrap(),
            3.623_898_318_388_478_4,
            max_relative = 1e-15
        );
        assert_eq!(PaFamily::affine().eval(&[2.0], 3).unwrap(), 5.0);
    }

    #[test]
    fn domain_errors() {
        let fam = PaFamily::power_offset();
        assert!(matches!(fam.eval(&[0.0, 0.5], 0), Err(PaError::Domain(_))));
        assert!(matches!(fam.eval(&[-0.99, 0.5], 1), Err(PaError::Domain(_))));
        assert!(matches!(fam.eval(&[0.0, 1.2], 1), Err(PaError::Domain(_))));
        assert!(matches!(fam.eval(&[0.0], 1), Err(PaError::Domain(_))));
        let ec = PaFamily::eventually_constant(3).unwrap();
        assert!(ec.eval(&[1.0, 2.0, 1.5], 1).is_err());
        assert_eq!(ec.eval(&[1.0, 2.0, 2.5], 10).unwrap(), 2.5);
    }

    #[test]
    fn closed_form_gradients() {
        assert_eq!(PaFamily::affine().grad(&[0.3], 5).unwrap()[0], 1.0);
        let g = PaFamily::power_offset().grad(&[0.0, 1.0], 3).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 3.0 * 3f64.ln(), epsilon = 1e-14);
        assert_eq!(PaFamily::affine().hess(&[1.5], 7).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn log_power_hessian_matches_symbolic() {
        let fam = PaFamily::log_power(1.0).unwrap();
        let beta = 1.7;
        // k + shift = 3
        let h = fam.hess(&[beta], 2).unwrap()[(0, 0)];
        let l3 = 3f64.ln();
        assert_relative_eq!(h, l3.powf(beta) * l3.ln().powi(2), max_relative = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fam = PaFamily::power_offset();
        for &theta in &[[4.0, 0.8], [0.0, 2.0 / 3.0], [-0.5, 0.3], [10.0, 1.0]] {
            for k in [1usize, 2, 7, 50, 1000] {
                let g = fam.grad(&theta, k).unwrap();
                for i in 0..2 {
                    let fd = central_diff(&fam, &theta, k, i, 1e-6);
                    assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-9);
                }
                let h = fam.hess(&theta, k).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        let mut p = theta;
                        let mut m = theta;
                        p[j] += 1e-5;
                        m[j] -= 1e-5;
                        let mut gp = [0.0; 2];
                        let mut gm = [0.0; 2];
                        fam.gradient_into(&p, k, &mut gp);
                        fam.gradient_into(&m, k, &mut gm);
                        let fd = (gp[i] - gm[i]) / 2e-5;
                        assert_relative_eq!(h[(i, j)], fd, max_relative = 1e-5, epsilon = 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn sublinear_witness() {
        let fam = PaFamily::power_offset();
        let theta = [3.0, 0.7];
        let ratio_max = (1..=1_000_000usize)
            .step_by(997)
            .map(|k| fam.value(&theta, k) / (k as f64).powf(0.7))
            .fold(0.0f64, f64::max);
        assert!(ratio_max <= 4f64.powf(0.7) + 1e-12);
    }

    #[test]
    fn config_round_trip() {
        let fam = PaFamily::power_offset();
        let cfg = FamilyConfig::from_family(&fam, &[0.0, 2.0 / 3.0]);
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("kind = \"power_offset\""));
        let back = FamilyConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.family().unwrap(), fam);

        let ec = FamilyConfig::from_toml("kind = \"eventually_constant\"\ncutoff = 3\nparameters = [1.0, 2.0, 2.0]\n")
            .unwrap();
        assert_eq!(ec.family().unwrap().dim(), 3);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("power-offset".parse::<FamilyKind>().unwrap(), FamilyKind::PowerOffset);
        assert_eq!(
            "eventually-constant:4".parse::<FamilyKind>().unwrap(),
            FamilyKind::EventuallyConstant { cutoff: 4 }
        );
        assert!("quadratic".parse::<FamilyKind>().is_err());
        assert_eq!(parse_theta("0, 2/3").unwrap(), vec![0.0, 2.0 / 3.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_degree(alpha in -0.95f64..20.0, beta in 0.0f64..=1.0, lb in 0.05f64..5.0) {
                let po = PaFamily::power_offset();
                let lp = PaFamily::log_power(1.0).unwrap();
                let mut prev_po = 0.0;
                let mut prev_lp = 0.0;
                for k in 1..=10_000usize {
                    let a = po.value(&[alpha, beta], k);
                    let b = lp.value(&[lb], k);
                    prop_assert!(a > 0.0 && b > 0.0);
                    prop_assert!(a >= prev_po && b >= prev_lp);
                    prev_po = a;
                    prev_lp = b;
                }
            }
        }
    }
}
