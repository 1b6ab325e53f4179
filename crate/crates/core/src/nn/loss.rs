use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-element BCE on a logit: `softplus(l) - l*t`, rearranged so that
/// neither branch exponentiates a large positive number.
#[inline]
pub(crate) fn bce_terms(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy between logits and targets in `[0, 1]`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    targets.expect_shape(logits.shape())?;
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if targets.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("targets", "values must lie in [0, 1]"));
    }
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&l, &t)| bce_terms(l, t))
        .sum();
    let loss = sum / logits.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce_with_logits"));
    }
    Ok(loss)
}
