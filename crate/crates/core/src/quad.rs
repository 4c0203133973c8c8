//! Adaptive Gauss-Kronrod (7/15) quadrature for vector-valued integrands.

use crate::error::{PaError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;
const MAX_PANELS: usize = 400;

struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    err: f64,
}

/// One 15-point Kronrod estimate on `[a, b]` with the embedded 7-point
/// Gauss difference as the error estimate.
fn gk15<F>(f: &F, a: f64, b: f64) -> Piece
where
    F: Fn(f64) -> Vec<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mid = f(c);
    let m = mid.len();
    let mut kron: Vec<f64> = mid.iter().map(|v| v * WGK[7]).collect();
    let mut gauss: Vec<f64> = mid.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = h * XGK[j];
        let lo = f(c - dx);
        let hi = f(c + dx);
        for i in 0..m {
            let s = lo[i] + hi[i];
            kron[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for i in 0..m {
        kron[i] *= h;
        gauss[i] *= h;
        err = err.max((kron[i] - gauss[i]).abs());
    }
    Piece { a, b, value: kron, err }
}

/// `int_a^b f` with max-abs error estimate at most `tol`.
pub fn integrate<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Vec<f64>,
{
    let mut pieces = vec![gk15(f, a, b)];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.err).sum();
        if total_err <= tol {
            break;
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(PaError::Numeric(format!(
                "quadrature on [{a}, {b}] stalled at error {total_err:e}"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("non-empty");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            return Err(PaError::Numeric("quadrature interval underflow".into()));
        }
        pieces.push(gk15(f, p.a, mid));
        pieces.push(gk15(f, mid, p.b));
    }
    let m = pieces[0].value.len();
    let mut out = vec![0.0; m];
    for p in &pieces {
        for i in 0..m {
            out[i] += p.value[i];
        }
    }
    Ok(out)
}

/// `int_a^inf f` over panels of doubling width starting at `width`.
///
/// Stops once the latest panel, together with a geometric extrapolation of
/// the panels still to come, is below `tol / 10`.
pub fn integrate_to_infinity<F>(f: &F, a: f64, width: f64, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Vec<f64>,
{
    let mut lo = a;
    let mut w = width;
    let mut total: Option<Vec<f64>> = None;
    let mut prev_size = f64::INFINITY;
    for panel in 0..MAX_PANELS {
        let part = integrate(f, lo, lo + w, tol / 20.0 * 0.5f64.powi(panel.min(30) as i32))?;
        let size = part.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match total.as_mut() {
            None => total = Some(part),
            Some(t) => t.iter_mut().zip(&part).for_each(|(t, p)| *t += p),
        }
        let ratio = if prev_size.is_finite() && prev_size > 0.0 {
            size / prev_size
        } else {
            1.0
        };
        let remainder = if ratio < 1.0 {
            size * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if panel >= 2 && size.max(remainder) < tol / 10.0 {
            return Ok(total.expect("set above"));
        }
        if panel >= 2 && size == 0.0 {
            return Ok(total.expect("set above"));
        }
        prev_size = size;
        lo += w;
        w *= 2.0;
    }
    Err(PaError::Numeric("improper integral did not settle".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(&|x: f64| vec![x.powi(5), 1.0], 0.0, 2.0, 1e-14).unwrap();
        assert!((v[0] - 64.0 / 6.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn improper_integrals() {
        let v = integrate_to_infinity(&|x: f64| vec![(-x).exp(), x * (-2.0 * x).exp()], 0.0, 1.0, 1e-12).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] - 0.25).abs() < 1e-12);
        let v = integrate_to_infinity(&|x: f64| vec![x.powf(-3.0)], 10.0, 10.0, 1e-12).unwrap();
        assert!((v[0] - 0.005).abs() < 1e-11);
    }
}
