use super::Tensor;
use crate::error::{Error, Result};

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logarithm.
pub const BCE_EPS: f64 = 1e-7;

fn same_shape(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(target.shape(), pred.shape()));
    }
    Ok(())
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Mean binary cross-entropy and its gradient w.r.t. `pred`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.raw_dim());
    for ((g, &p), &t) in grad.iter_mut().zip(pred.iter()).zip(target.iter()) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = (-t / p + (1.0 - t) / (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}
