use rand::Rng;

use crate::error::{Error, Result};
use crate::synth::augment::{augment_image, AugKind, Augmentation};
use crate::synth::patch::{generate_patch, Patch, TextureSpec};
use crate::synth::NOISE_VAR_LIMIT;
use crate::tensor::Tensor;

/// Public reference patches with one assigned augmentation each.
///
/// The augmented inputs are realized once at construction so that every
/// later prediction over the set sees exactly the same pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    patches: Vec<Patch>,
    assigned_augs: Vec<Augmentation>,
    inputs: Vec<Tensor>,
}

impl ReferenceSet {
    pub fn from_parts<R: Rng + ?Sized>(
        patches: Vec<Patch>,
        assigned_augs: Vec<Augmentation>,
        rng: &mut R,
    ) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        if patches.len() != assigned_augs.len() {
            return Err(Error::LengthMismatch {
                expected: patches.len(),
                actual: assigned_augs.len(),
            });
        }
        let mut inputs = Vec::with_capacity(patches.len());
        for (p, aug) in patches.iter().zip(&assigned_augs) {
            let side = p.side();
            let img = augment_image(p.image.data(), side, aug, rng)?;
            inputs.push(Tensor::new(vec![1, 1, side, side], img)?);
        }
        Ok(Self {
            patches,
            assigned_augs,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn assigned_augs(&self) -> &[Augmentation] {
        &self.assigned_augs
    }

    /// Augmented network inputs, each shaped `[1,1,H,W]`.
    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn patch_size(&self) -> usize {
        self.patches[0].side()
    }

    pub fn kind_counts(&self) -> Vec<(AugKind, usize)> {
        let mut out: Vec<(AugKind, usize)> = Vec::new();
        for aug in &self.assigned_augs {
            match out.iter_mut().find(|(k, _)| *k == aug.kind()) {
                Some((_, n)) => *n += 1,
                None => out.push((aug.kind(), 1)),
            }
        }
        out
    }
}

/// Desk-scale reference augmentation pool: Gaussian blur (k=3, σ=0.5),
/// motion blur (limit 5) and Gaussian noise. Gaussian blur is dropped when
/// it is also the training shift, so the reference set cannot leak it.
pub fn reference_pool(augmented: bool, shift_is_gaussian_blur: bool) -> Vec<Augmentation> {
    if !augmented {
        return vec![Augmentation::Identity];
    }
    let mut pool = Vec::with_capacity(3);
    if !shift_is_gaussian_blur {
        pool.push(Augmentation::GaussianBlur {
            kernel: 3,
            sigma: 0.5,
        });
    }
    pool.push(Augmentation::MotionBlur { limit: 5, seed: 0 });
    pool.push(Augmentation::GaussianNoise {
        var_limit: NOISE_VAR_LIMIT,
    });
    pool
}

/// `n` reference patches drawn from `spec`, augmentation kinds assigned
/// round-robin over `kinds`. Motion-blur entries get a fresh angle seed.
pub fn build_reference_set<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
    kinds: &[Augmentation],
    spec: &TextureSpec,
) -> Result<ReferenceSet> {
    if n == 0 {
        return Err(Error::Empty("reference set"));
    }
    if kinds.is_empty() {
        return Err(Error::Empty("augmentation pool"));
    }
    if n < kinds.len() {
        return Err(Error::invalid(
            "refset_size",
            format!(
                "{n} patches cannot cover {} augmentation kinds",
                kinds.len()
            ),
        ));
    }
    let mut patches = Vec::with_capacity(n);
    let mut augs = Vec::with_capacity(n);
    for i in 0..n {
        let mut patch = generate_patch(rng, spec)?;
        patch.patient_id = i as u32;
        patches.push(patch);
        let aug = match kinds[i % kinds.len()] {
            Augmentation::MotionBlur { limit, .. } => Augmentation::MotionBlur {
                limit,
                seed: rng.random(),
            },
            other => other,
        };
        augs.push(aug);
    }
    ReferenceSet::from_parts(patches, augs, rng)
}
