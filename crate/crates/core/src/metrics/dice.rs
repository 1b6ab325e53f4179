use crate::error::{Error, Result};
use crate::nn::{model_forward, sigmoid, ModelParams};
use crate::synth::Patch;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Dice overlap of `pred > threshold` with a binary ground truth.
/// Two empty masks count as a perfect match.
pub fn dice(pred_probs: &[f64], gt_mask: &[f64], threshold: f64) -> Result<f64> {
    if pred_probs.len() != gt_mask.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![gt_mask.len()],
            actual: vec![pred_probs.len()],
        });
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&prob, &m) in pred_probs.iter().zip(gt_mask) {
        if m != 0.0 && m != 1.0 {
            return Err(Error::invalid("gt_mask", "must be binary"));
        }
        let hit = prob > threshold;
        let fg = m == 1.0;
        p += hit as usize;
        g += fg as usize;
        inter += (hit && fg) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Mean per-patch dice of `model` on unshifted test patches.
pub fn evaluate(model: &ModelParams, testset: &[Patch]) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut total = 0.0;
    for patch in testset {
        let side = patch.side();
        let input = Tensor::new(vec![1, 1, side, side], patch.image.data().to_vec())?;
        let logits = model_forward(model, &input)?;
        let probs: Vec<f64> = logits.data().iter().map(|&l| sigmoid(l)).collect();
        total += dice(&probs, patch.mask.data(), DEFAULT_THRESHOLD)?;
    }
    Ok(total / testset.len() as f64)
}
