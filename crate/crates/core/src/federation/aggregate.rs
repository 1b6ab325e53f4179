use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Equal-weight parameter mean, summed in the order given (callers pass
/// clients in ascending id order so the result is bit-stable).
pub fn aggregate_mean(models: &[&ModelParams]) -> Result<ModelParams> {
    let (first, rest) = models.split_first().ok_or(Error::Empty("model list"))?;
    let mut sum = first.flatten();
    for m in rest {
        if !m.is_aggregable_with(first) {
            return Err(Error::ArchMismatch);
        }
        for (s, v) in sum.iter_mut().zip(m.theta()) {
            *s += v;
        }
    }
    if !rest.is_empty() {
        let k = models.len() as f64;
        sum.iter_mut().for_each(|s| *s /= k);
    }
    ModelParams::unflatten(first.arch().clone(), sum)
}

/// Folds `model` into a mean that already covers `count` models.
pub fn running_mean(
    current: &ModelParams,
    count: usize,
    model: &ModelParams,
) -> Result<ModelParams> {
    if !current.is_aggregable_with(model) {
        return Err(Error::ArchMismatch);
    }
    if count == 0 {
        return Ok(model.clone());
    }
    let k = (count + 1) as f64;
    let theta = current
        .theta()
        .iter()
        .zip(model.theta())
        .map(|(c, m)| c + (m - c) / k)
        .collect();
    ModelParams::unflatten(current.arch().clone(), theta)
}
