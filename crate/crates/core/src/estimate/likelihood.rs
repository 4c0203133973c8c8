//! Normalized log-likelihood and pseudo log-likelihood with derivatives.
//!
//! The history likelihood, with the parameter-free term dropped, is
//! `sum_k log f(k) P_{>k}(n) - (1/n) sum_{t=2..n} log S_f(t-1)`.
//! The snapshot version replaces the Cesaro average by `log S_f(n)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{PaError, Result};
use crate::model::{DerivOrder, PaFamily, PrefTable};
use crate::tree::{DegreeSnapshot, GrowthHistory};

/// Objective value with optional gradient and Hessian.
#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Sufficient data for the history likelihood.
#[derive(Debug, Clone)]
pub struct MleData {
    n: usize,
    /// `chosen[k-1] = #{t : D_t = k} = N_{>k}(n)`.
    chosen: Vec<u64>,
    degrees: Vec<u32>,
}

impl MleData {
    pub fn new(history: &GrowthHistory) -> Self {
        let mut chosen = Vec::new();
        for &d in history.degrees() {
            let d = d as usize;
            if chosen.len() < d {
                chosen.resize(d, 0);
            }
            chosen[d - 1] += 1;
        }
        Self {
            n: history.n(),
            chosen,
            degrees: history.degrees().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn kmax(&self) -> usize {
        self.chosen.len() + 1
    }
}

/// Sufficient data for the snapshot likelihood.
#[derive(Debug, Clone)]
pub struct PmleData {
    n: usize,
    counts: Vec<(usize, u64)>,
    tails: Vec<(usize, u64)>,
    kmax: usize,
}

impl PmleData {
    pub fn new(snapshot: &DegreeSnapshot) -> Self {
        let counts: Vec<(usize, u64)> = snapshot.iter().collect();
        let tails = (1..snapshot.max_degree())
            .map(|k| (k, snapshot.tail_count(k)))
            .filter(|(_, c)| *c > 0)
            .collect();
        Self {
            n: snapshot.n(),
            counts,
            tails,
            kmax: snapshot.max_degree(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn checked_table(family: &PaFamily, theta: &[f64], kmax: usize, order: DerivOrder) -> Result<PrefTable> {
    family.check_theta(theta)?;
    let table = family.table_unchecked(theta, kmax, order);
    for k in 1..=table.kmax() {
        let f = table.f(k);
        if !(f > 0.0) || !f.is_finite() {
            return Err(PaError::domain(format!("f({k}) = {f} is not positive")));
        }
    }
    Ok(table)
}

/// Accumulates `sum_k w_k log f(k)` and its derivatives.
fn add_log_terms(table: &PrefTable, weights: impl Iterator<Item = (usize, f64)>, order: DerivOrder, out: &mut Eval) {
    let d = table.dim();
    for (k, w) in weights {
        let f = table.f(k);
        out.value += w * f.ln();
        if order >= DerivOrder::First {
            let g = table.df(k);
            for i in 0..d {
                out.grad[i] += w * g[i] / f;
            }
            if order >= DerivOrder::Second {
                let h = table.d2f(k);
                for i in 0..d {
                    for j in 0..d {
                        out.hess[(i, j)] += w * (h[i * d + j] / f - g[i] * g[j] / (f * f));
                    }
                }
            }
        }
    }
}

/// Running totals `S_f`, `S_{grad f}`, `S_{hess f}`.
struct Totals {
    s: f64,
    sg: Vec<f64>,
    sh: Vec<f64>,
}

impl Totals {
    fn root(table: &PrefTable, order: DerivOrder) -> Self {
        let d = table.dim();
        let mut t = Self {
            s: table.f(1),
            sg: vec![0.0; d],
            sh: vec![0.0; d * d],
        };
        if order >= DerivOrder::First {
            t.sg.copy_from_slice(table.df(1));
        }
        if order >= DerivOrder::Second {
            t.sh.copy_from_slice(table.d2f(1));
        }
        t
    }

    /// Subtracts `w * log S` and its derivatives from `out`.
    fn subtract_log(&self, w: f64, order: DerivOrder, out: &mut Eval) {
        let d = self.sg.len();
        out.value -= w * self.s.ln();
        if order >= DerivOrder::First {
            let inv = 1.0 / self.s;
            for i in 0..d {
                out.grad[i] -= w * self.sg[i] * inv;
            }
            if order >= DerivOrder::Second {
                let inv2 = inv * inv;
                for i in 0..d {
                    for j in 0..d {
                        out.hess[(i, j)] -= w * (self.sh[i * d + j] * inv - self.sg[i] * self.sg[j] * inv2);
                    }
                }
            }
        }
    }

    /// Degree update for an attachment to a degree-`k` node.
    #[inline]
    fn step(&mut self, table: &PrefTable, k: usize, order: DerivOrder) {
        self.s += table.f(k + 1) - table.f(k) + table.f(1);
        if order >= DerivOrder::First {
            let (a, b, c) = (table.df(k + 1), table.df(k), table.df(1));
            for i in 0..self.sg.len() {
                self.sg[i] += a[i] - b[i] + c[i];
            }
            if order >= DerivOrder::Second {
                let (a, b, c) = (table.d2f(k + 1), table.d2f(k), table.d2f(1));
                for i in 0..self.sh.len() {
                    self.sh[i] += a[i] - b[i] + c[i];
                }
            }
        }
    }
}

fn zero_eval(d: usize) -> Eval {
    Eval {
        value: 0.0,
        grad: DVector::zeros(d),
        hess: DMatrix::zeros(d, d),
    }
}

/// History log-likelihood and its derivatives up to `order`.
pub fn evaluate_mle(family: &PaFamily, theta: &[f64], data: &MleData, order: DerivOrder) -> Result<Eval> {
    let table = checked_table(family, theta, data.kmax(), order)?;
    let n = data.n as f64;
    let mut out = zero_eval(family.dim());
    add_log_terms(
        &table,
        data.chosen
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (i + 1, *c as f64 / n)),
        order,
        &mut out,
    );
    let mut totals = Totals::root(&table, order);
    let w = 1.0 / n;
    match order {
        DerivOrder::Value => {
            // Sum of logs as a log of products in blocks, for speed.
            let mut acc = 0.0;
            let mut prod = 1.0;
            for (i, &dt) in data.degrees.iter().enumerate() {
                prod *= totals.s;
                if i % 16 == 15 {
                    acc += prod.ln();
                    prod = 1.0;
                }
                totals.step(&table, dt as usize, order);
            }
            acc += prod.ln();
            out.value -= w * acc;
        }
        _ => {
            for &dt in &data.degrees {
                totals.subtract_log(w, order, &mut out);
                totals.step(&table, dt as usize, order);
            }
        }
    }
    Ok(out)
}

/// Snapshot pseudo log-likelihood and its derivatives up to `order`.
pub fn evaluate_pmle(family: &PaFamily, theta: &[f64], data: &PmleData, order: DerivOrder) -> Result<Eval> {
    let table = checked_table(family, theta, data.kmax, order)?;
    let n = data.n as f64;
    let d = family.dim();
    let mut out = zero_eval(d);
    add_log_terms(
        &table,
        data.tails.iter().map(|(k, c)| (*k, *c as f64 / n)),
        order,
        &mut out,
    );
    let mut totals = Totals {
        s: 0.0,
        sg: vec![0.0; d],
        sh: vec![0.0; d * d],
    };
    for &(k, c) in &data.counts {
        let c = c as f64;
        totals.s += c * table.f(k);
        if order >= DerivOrder::First {
            for (acc, g) in totals.sg.iter_mut().zip(table.df(k)) {
                *acc += c * g;
            }
        }
        if order >= DerivOrder::Second {
            for (acc, h) in totals.sh.iter_mut().zip(table.d2f(k)) {
                *acc += c * h;
            }
        }
    }
    totals.subtract_log(1.0, order, &mut out);
    Ok(out)
}

/// Normalized log-likelihood of a history.
pub fn loglik(family: &PaFamily, theta: &[f64], history: &GrowthHistory) -> Result<f64> {
    Ok(evaluate_mle(family, theta, &MleData::new(history), DerivOrder::Value)?.value)
}

pub fn score(family: &PaFamily, theta: &[f64], history: &GrowthHistory) -> Result<DVector<f64>> {
    Ok(evaluate_mle(family, theta, &MleData::new(history), DerivOrder::First)?.grad)
}

pub fn hessian(family: &PaFamily, theta: &[f64], history: &GrowthHistory) -> Result<DMatrix<f64>> {
    Ok(evaluate_mle(family, theta, &MleData::new(history), DerivOrder::Second)?.hess)
}

pub fn pseudo_loglik(family: &PaFamily, theta: &[f64], snapshot: &DegreeSnapshot) -> Result<f64> {
    Ok(evaluate_pmle(family, theta, &PmleData::new(snapshot), DerivOrder::Value)?.value)
}

pub fn pseudo_score(family: &PaFamily, theta: &[f64], snapshot: &DegreeSnapshot) -> Result<DVector<f64>> {
    Ok(evaluate_pmle(family, theta, &PmleData::new(snapshot), DerivOrder::First)?.grad)
}

pub fn pseudo_hessian(family: &PaFamily, theta: &[f64], snapshot: &DegreeSnapshot) -> Result<DMatrix<f64>> {
    Ok(evaluate_pmle(family, theta, &PmleData::new(snapshot), DerivOrder::Second)?.hess)
}

/// Log-likelihood, score and Hessian of a history read in one pass.
///
/// Memory is proportional to the largest degree seen, not to `n`. The
/// degrees are `D_2, .., D_n` in order.
pub fn evaluate_mle_stream<I>(family: &PaFamily, theta: &[f64], degrees: I, order: DerivOrder) -> Result<Eval>
where
    I: IntoIterator<Item = Result<u32>>,
{
    family.check_theta(theta)?;
    let d = family.dim();
    let mut kmax = 64;
    let mut table = checked_table(family, theta, kmax, order)?;
    let mut totals = Totals::root(&table, order);
    let mut out = zero_eval(d);
    let mut chosen: Vec<u64> = Vec::new();
    let mut n = 1usize;
    for dt in degrees {
        let dt = dt? as usize;
        if dt == 0 || dt > n {
            return Err(PaError::Integrity(format!("D_{} = {dt} is impossible", n + 1)));
        }
        if dt + 1 > kmax {
            kmax = (dt + 1).next_power_of_two();
            table = checked_table(family, theta, kmax, order)?;
        }
        if chosen.len() < dt {
            chosen.resize(dt, 0);
        }
        chosen[dt - 1] += 1;
        // Unnormalized; divided by n at the end.
        totals.subtract_log(1.0, order, &mut out);
        totals.step(&table, dt, order);
        n += 1;
    }
    let nf = n as f64;
    out.value /= nf;
    out.grad /= nf;
    out.hess /= nf;
    add_log_terms(
        &table,
        chosen
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (i + 1, *c as f64 / nf)),
        order,
        &mut out,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{grow, snapshot_of};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn hist(n: usize, d: &[u32]) -> GrowthHistory {
        GrowthHistory::new(n, d.to_vec()).unwrap()
    }

    #[test]
    fn hand_values() {
        let lin = PaFamily::affine();
        assert_abs_diff_eq!(loglik(&lin, &[0.0], &hist(2, &[1])).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            loglik(&lin, &[0.0], &hist(3, &[1, 2])).unwrap(),
            (2.0f64 / 3.0).ln() / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(score(&lin, &[0.7], &hist(2, &[1])).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_eq!(loglik(&lin, &[0.0], &hist(1, &[])).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_hand_values() {
        let fam = PaFamily::power_offset();
        let one = DegreeSnapshot::from_counts(&BTreeMap::from([(1, 1)])).unwrap();
        let theta = [1.5, 0.5];
        assert_abs_diff_eq!(
            pseudo_loglik(&fam, &theta, &one).unwrap(),
            -(2.5f64.sqrt()).ln(),
            epsilon = 1e-15
        );
        let s = DegreeSnapshot::from_counts(&BTreeMap::from([(1, 2), (2, 1)])).unwrap();
        assert_abs_diff_eq!(
            pseudo_loglik(&PaFamily::affine(), &[0.0], &s).unwrap(),
            -(4.0f64).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn matches_per_step_oracle() {
        let fam = PaFamily::power_offset();
        let theta = [0.5, 0.7];
        let (h, _) = grow(&fam, &theta, 3000, 5).unwrap();
        let mut s = fam.value(&theta, 1);
        let mut naive = 0.0;
        for &d in h.degrees() {
            let d = d as usize;
            naive += fam.value(&theta, d).ln() - s.ln();
            s += fam.value(&theta, d + 1) - fam.value(&theta, d) + fam.value(&theta, 1);
        }
        naive /= h.n() as f64;
        let v = loglik(&fam, &theta, &h).unwrap();
        assert_abs_diff_eq!(v, naive, epsilon = 1e-12);
        let full = evaluate_mle(&fam, &theta, &MleData::new(&h), DerivOrder::Second).unwrap();
        assert_abs_diff_eq!(full.value, naive, epsilon = 1e-12);
    }

    #[test]
    fn streaming_agrees() {
        let fam = PaFamily::log_power(1.0).unwrap();
        let (h, _) = grow(&fam, &[1.3], 2000, 8).unwrap();
        let a = evaluate_mle(&fam, &[1.1], &MleData::new(&h), DerivOrder::Second).unwrap();
        let b = evaluate_mle_stream(&fam, &[1.1], h.degrees().iter().map(|d| Ok(*d)), DerivOrder::Second).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-12);
        assert_abs_diff_eq!(a.grad[0], b.grad[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a.hess[(0, 0)], b.hess[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn pseudo_score_matches_differences() {
        let fam = PaFamily::power_offset();
        let (h, _) = grow(&fam, &[0.0, 2.0 / 3.0], 5000, 3).unwrap();
        let snap = snapshot_of(&h).unwrap();
        let data = PmleData::new(&snap);
        let theta = [0.3, 0.6];
        let e = evaluate_pmle(&fam, &theta, &data, DerivOrder::Second).unwrap();
        for i in 0..2 {
            let step = 1e-6;
            let mut p = theta;
            let mut m = theta;
            p[i] += step;
            m[i] -= step;
            let ep = evaluate_pmle(&fam, &p, &data, DerivOrder::First).unwrap();
            let em = evaluate_pmle(&fam, &m, &data, DerivOrder::First).unwrap();
            let fd = (ep.value - em.value) / (2.0 * step);
            assert!((e.grad[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
            for j in 0..2 {
                let fd = (ep.grad[j] - em.grad[j]) / (2.0 * step);
                assert!((e.hess[(j, i)] - fd).abs() <= 1e-5 * fd.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn rejects_out_of_box() {
        let h = hist(2, &[1]);
        assert!(matches!(
            loglik(&PaFamily::affine(), &[-1.0], &h),
            Err(PaError::Domain(_))
        ));
    }
}
