//! Losses: element-wise binary cross-entropy and categorical cross-entropy,
//! plus fused logit-space variants used on the recognizer training hot path.
//!
//! Convention: losses are summed over outputs and averaged over the batch;
//! returned gradients are with respect to the prediction tensor and carry
//! the same 1/batch factor.

use crate::error::{Error, Result};
use crate::num::tensor::Tensor;

/// Predictions are clipped to [EPS, 1 - EPS] before any logarithm so a
/// saturated sigmoid cannot produce an infinite loss.
pub const LOG_CLIP_EPS: f64 = 1e-7;

#[inline]
fn clip(p: f64) -> f64 {
    p.clamp(LOG_CLIP_EPS, 1.0 - LOG_CLIP_EPS)
}

/// Binary cross-entropy between predictions in (0,1) and binary targets,
/// summed over outputs and averaged over the leading batch axis.
/// Returns the loss and its gradient with respect to `pred`.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("bce target", pred.shape(), target.shape()));
    }
    let batch = pred.batch_len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    let g = grad.data_mut();
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let pc = clip(p);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        g[i] = (-t / pc + (1.0 - t) / (1.0 - pc)) / batch;
    }
    Ok((loss / batch, grad))
}

/// Categorical cross-entropy of probability rows against integer labels:
/// mean over rows of -ln p[label].
pub fn ce(probs: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    let b = probs.batch_len();
    if b != labels.len() {
        return Err(Error::shape("ce labels", &[b], &[labels.len()]));
    }
    let cols: usize = probs.item_shape().iter().product();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for (i, &label) in labels.iter().enumerate() {
        let l = label as usize;
        if l >= cols {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {cols} classes"
            )));
        }
        let p = clip(probs.row(i)[l]);
        loss -= p.ln();
        grad.row_mut(i)[l] = -1.0 / (p * b as f64);
    }
    Ok((loss / b as f64, grad))
}

/// Per-row target for the fused logit losses: a hot class or all-zero.
pub type RowTarget = Option<u32>;

/// Element-wise BCE computed directly from logits for one-hot-or-silent
/// row targets. Mathematically equal to `bce(sigmoid(z), t)` without the
/// clip guard (the logit form never overflows):
/// sum_j softplus(z_j) - z_hot. Returns loss and d loss / d logits, both
/// averaged over the batch; the gradient is sigmoid(z) - t.
pub fn bce_logits_one_hot(logits: &Tensor, targets: &[RowTarget]) -> Result<(f64, Tensor)> {
    let b = logits.batch_len();
    if b != targets.len() {
        return Err(Error::shape("bce_logits targets", &[b], &[targets.len()]));
    }
    let cols: usize = logits.item_shape().iter().product();
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for (i, t) in targets.iter().enumerate() {
        let zr = logits.row(i);
        let gr = grad.row_mut(i);
        for (g, &z) in gr.iter_mut().zip(zr) {
            loss += softplus(z);
            *g = crate::num::layers::sigmoid(z) * inv_b;
        }
        if let Some(c) = t {
            let c = *c as usize;
            if c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "target class {c} out of range for {cols} outputs"
                )));
            }
            loss -= zr[c];
            gr[c] -= inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Loss-only variant of [`bce_logits_one_hot`] for validation passes.
pub fn bce_logits_loss_only(logits: &Tensor, targets: &[RowTarget]) -> Result<f64> {
    let b = logits.batch_len();
    if b != targets.len() {
        return Err(Error::shape("bce_logits targets", &[b], &[targets.len()]));
    }
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let zr = logits.row(i);
        for &z in zr {
            loss += softplus(z);
        }
        if let Some(c) = t {
            loss -= zr[*c as usize];
        }
    }
    Ok(loss / b as f64)
}

/// Numerically stable ln(1 + e^z). Below -37 the true value is under
/// 1e-16, insignificant against any loss this crate compares, so the
/// log1p is skipped.
#[inline]
pub fn softplus(z: f64) -> f64 {
    let a = -z.abs();
    let base = if z > 0.0 { z } else { 0.0 };
    if a < -37.0 {
        base + a.exp()
    } else {
        base + a.exp().ln_1p()
    }
}
