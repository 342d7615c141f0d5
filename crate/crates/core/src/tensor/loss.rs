use super::{dot, Tensor};
use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate by [`cosine_sim`].
pub const NORM_EPS: f64 = 1e-12;

/// Mean squared error and its gradient with respect to `x_hat`.
pub fn mse_loss(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor)> {
    x_hat.expect_shape("mse_loss", x.shape())?;
    let n = x.len() as f64;
    let mut grad = Tensor::zeros(x.shape());
    let mut sum = 0.0;
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        let d = b - a;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

fn checked_norm(v: &[f64], which: &str) -> Result<f64> {
    let norm = dot(v, v).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("norm of {which}")));
    }
    if norm <= NORM_EPS {
        return Err(Error::DegenerateVector {
            context: which.to_string(),
            norm,
            eps: NORM_EPS,
        });
    }
    Ok(norm)
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_sim", &[a.len()], &[b.len()]));
    }
    let na = checked_norm(a, "first operand")?;
    let nb = checked_norm(b, "second operand")?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity plus its gradient with respect to `a`:
/// `b / (|a| |b|) - cos(a, b) * a / |a|^2`.
pub fn cosine_sim_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_sim", &[a.len()], &[b.len()]));
    }
    let na = checked_norm(a, "first operand")?;
    let nb = checked_norm(b, "second operand")?;
    // The unclamped value keeps the gradient exact; clamping only guards the reported score.
    let cos = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let a_scale = cos / (na * na);
    let grad = a.iter().zip(b).map(|(&ai, &bi)| bi * inv - a_scale * ai).collect();
    Ok((cos.clamp(-1.0, 1.0), grad))
}
