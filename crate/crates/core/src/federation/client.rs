use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{loss_and_gradient, AdamState, ModelParams};
use crate::synth::{augment_image, Augmentation, Patch};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientBehavior {
    Honest,
    /// Returns uniformly random parameters in `[-scale, scale)` instead of
    /// training, from global round `from_round` (1-based) onward.
    Randomized {
        from_round: usize,
        scale: f64,
    },
}

/// A federated participant. The shift (if any) is applied to training
/// images on the fly; stored patches stay clean.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: Vec<Patch>,
    pub shift: Option<Augmentation>,
    pub adam: AdamState,
    pub rehearsal_buffer: Option<Vec<Patch>>,
    /// Share of each epoch's samples drawn from the rehearsal buffer.
    pub rehearsal_fraction: f64,
    pub batch_size: usize,
    pub behavior: ClientBehavior,
    rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(
        id: usize,
        data: Vec<Patch>,
        param_count: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + id as u64);
        Self {
            id,
            data,
            shift: None,
            adam: AdamState::new(param_count, lr),
            rehearsal_buffer: None,
            rehearsal_fraction: 0.1,
            batch_size,
            behavior: ClientBehavior::Honest,
            rng,
        }
    }

    /// Freezes a uniformly sampled `fraction` of the (unshifted) local data
    /// as the rehearsal buffer. No-op if a buffer already exists.
    pub fn capture_rehearsal(&mut self, fraction: f64) {
        if self.rehearsal_buffer.is_some() || self.data.is_empty() {
            return;
        }
        let n = ((self.data.len() as f64 * fraction).ceil() as usize).clamp(1, self.data.len());
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(&mut self.rng);
        idx.truncate(n);
        idx.sort_unstable();
        self.rehearsal_buffer = Some(idx.into_iter().map(|i| self.data[i].clone()).collect());
        self.rehearsal_fraction = fraction;
    }

    pub(crate) fn random_model(&mut self, like: &ModelParams, scale: f64) -> ModelParams {
        ModelParams::uniform(like.arch().clone(), scale, &mut self.rng)
    }
}

/// Trains a copy of `global` on the client's data for `local_epochs`
/// epochs of mini-batch Adam. Returns the new parameters and the mean
/// training loss over all batches.
pub fn client_local_train(
    client: &mut ClientState,
    global: &ModelParams,
    local_epochs: usize,
) -> Result<(ModelParams, f64)> {
    if local_epochs == 0 {
        return Err(Error::invalid("local_epochs", "must be at least 1"));
    }
    if client.data.is_empty() {
        return Err(Error::Empty("client data"));
    }
    if client.adam.m.len() != global.theta().len() {
        return Err(Error::LengthMismatch {
            expected: global.theta().len(),
            actual: client.adam.m.len(),
        });
    }
    let side = client.data[0].side();
    let mut model = global.clone();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;

    for _ in 0..local_epochs {
        // (patch, apply_shift)
        let mut order: Vec<(&Patch, bool)> = client.data.iter().map(|p| (p, true)).collect();
        if let Some(buffer) = client.rehearsal_buffer.as_ref().filter(|b| !b.is_empty()) {
            let f = client.rehearsal_fraction;
            let extra = (order.len() as f64 * f / (1.0 - f)).round() as usize;
            for _ in 0..extra {
                let i = client.rng.random_range(0..buffer.len());
                order.push((&buffer[i], false));
            }
        }
        order.shuffle(&mut client.rng);

        for chunk in order.chunks(client.batch_size) {
            let mut images = Vec::with_capacity(chunk.len() * side * side);
            let mut masks = Vec::with_capacity(chunk.len() * side * side);
            for &(patch, shiftable) in chunk {
                match (&client.shift, shiftable) {
                    (Some(aug), true) => images.extend(augment_image(
                        patch.image.data(),
                        side,
                        aug,
                        &mut client.rng,
                    )?),
                    _ => images.extend_from_slice(patch.image.data()),
                }
                masks.extend_from_slice(patch.mask.data());
            }
            let shape = vec![chunk.len(), 1, side, side];
            let images = Tensor::new(shape.clone(), images)?;
            let masks = Tensor::new(shape, masks)?;
            let (loss, grad) = loss_and_gradient(&model, &images, &masks, 1.0)?;
            client.adam.step(model.theta_mut(), &grad)?;
            loss_sum += loss;
            batches += 1;
        }
    }
    Ok((model, loss_sum / batches as f64))
}
