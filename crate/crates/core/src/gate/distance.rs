use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{model_forward, sigmoid, ModelParams};
use crate::synth::ReferenceSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMetric {
    /// Mean over reference patches of the L2 norm of the difference between
    /// the two probability maps. Zero iff the predictions coincide.
    #[default]
    #[serde(rename = "diffnorm")]
    DiffNorm,
    /// Mean over reference patches of the inner product of the two
    /// probability maps. Large when the predictions overlap.
    #[serde(rename = "dot")]
    DotProduct,
}

/// Per-patch probability maps of one model over a reference set.
pub type Predictions = Vec<Vec<f64>>;

/// Sigmoid probabilities of `model` on every augmented reference input.
pub fn prediction_of(model: &ModelParams, refset: &ReferenceSet) -> Result<Predictions> {
    if refset.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    if model.arch().patch_size != refset.patch_size() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.arch().patch_size, model.arch().patch_size],
            actual: vec![refset.patch_size(), refset.patch_size()],
        });
    }
    refset
        .inputs()
        .iter()
        .map(|input| {
            model_forward(model, input)
                .map(|logits| logits.into_data().into_iter().map(sigmoid).collect())
        })
        .collect()
}

/// Distance between two sets of cached predictions.
pub fn prediction_distance(a: &[Vec<f64>], b: &[Vec<f64>], metric: DistanceMetric) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut total = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        if pa.len() != pb.len() {
            return Err(Error::LengthMismatch {
                expected: pa.len(),
                actual: pb.len(),
            });
        }
        total += match metric {
            DistanceMetric::DiffNorm => pa
                .iter()
                .zip(pb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::DotProduct => pa.iter().zip(pb).map(|(x, y)| x * y).sum::<f64>(),
        };
    }
    Ok(total / a.len() as f64)
}

/// Mean prediction distance between two models over the reference set.
pub fn dynbc_distance(
    model_a: &ModelParams,
    model_b: &ModelParams,
    refset: &ReferenceSet,
    metric: DistanceMetric,
) -> Result<f64> {
    if !model_a.is_aggregable_with(model_b) {
        return Err(Error::ArchMismatch);
    }
    let pa = prediction_of(model_a, refset)?;
    let pb = prediction_of(model_b, refset)?;
    prediction_distance(&pa, &pb, metric)
}
