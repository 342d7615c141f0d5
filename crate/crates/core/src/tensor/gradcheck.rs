//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Central-difference estimate of the gradient of `f` at `point`.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    numeric_partials(f, point, &coords, step)
}

/// Central-difference partials of `f` at `point` for the given coordinates only.
pub fn numeric_partials<F>(mut f: F, point: &[f64], coords: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let base = f(&x);
    if !base.is_finite() {
        return Err(Error::NonFinite("function value at check point".into()));
    }
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}
