use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single-channel image with its binary ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub image: Tensor,
    pub mask: Tensor,
    pub patient_id: u32,
}

impl Patch {
    pub fn new(image: Tensor, mask: Tensor, patient_id: u32) -> Result<Self> {
        if image.shape().len() != 3 || image.shape()[0] != 1 {
            return Err(Error::ShapeMismatch {
                expected: vec![1, 0, 0],
                actual: image.shape().to_vec(),
            });
        }
        mask.expect_shape(image.shape())?;
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask", "must be strictly binary"));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image", "values must lie in [0, 1]"));
        }
        Ok(Self {
            image,
            mask,
            patient_id,
        })
    }

    pub fn side(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Statistics of the synthetic tissue generator.
///
/// Foreground regions are a union of randomly oriented ellipses drawn on a
/// slowly varying background; both carry per-pixel Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub size: usize,
    /// Inclusive range of blob counts per patch.
    pub blobs: (usize, usize),
    /// Range of ellipse semi-axes in pixels.
    pub radius: (f64, f64),
    pub foreground: f64,
    pub background: f64,
    pub noise_std: f64,
    /// Amplitude of the low-frequency background undulation.
    pub undulation: f64,
    /// Half-width of the per-patient uniform intensity offset.
    pub patient_jitter: f64,
}

impl TextureSpec {
    /// Training/test distribution at desk scale.
    pub fn tissue(size: usize) -> Self {
        Self {
            size,
            blobs: (1, 3),
            radius: (0.08 * size as f64, 0.19 * size as f64),
            foreground: 0.62,
            background: 0.34,
            noise_std: 0.06,
            undulation: 0.04,
            patient_jitter: 0.03,
        }
    }

    /// Separate public-dataset stand-in used only for reference patches.
    pub fn reference(size: usize) -> Self {
        Self {
            size,
            blobs: (1, 4),
            radius: (0.0625 * size as f64, 0.156 * size as f64),
            foreground: 0.58,
            background: 0.30,
            noise_std: 0.07,
            undulation: 0.05,
            patient_jitter: 0.04,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("size", "must be positive"));
        }
        if self.blobs.0 > self.blobs.1 {
            return Err(Error::invalid("blobs", "min exceeds max"));
        }
        let (lo, hi) = self.radius;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("radius", "need 0 < min <= max"));
        }
        if self.blobs.1 > 0 && 2.0 * hi > self.size as f64 {
            return Err(Error::invalid("radius", "blob larger than patch"));
        }
        for (name, v) in [
            ("foreground", self.foreground),
            ("background", self.background),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "intensity must lie in [0, 1]"));
            }
        }
        if self.noise_std < 0.0 || self.undulation < 0.0 || self.patient_jitter < 0.0 {
            return Err(Error::invalid(
                "noise_std",
                "noise terms must be non-negative",
            ));
        }
        Ok(())
    }
}

/// One patch from `spec`, with intensities offset by `stain` (a per-patient
/// shift drawn by [`generate_cohort`]).
fn render<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &TextureSpec,
    stain: f64,
    patient_id: u32,
) -> Result<Patch> {
    spec.validate()?;
    let n = spec.size;
    let mut mask = vec![0.0; n * n];
    let count = rng.random_range(spec.blobs.0..=spec.blobs.1);
    for _ in 0..count {
        let a = rng.random_range(spec.radius.0..=spec.radius.1);
        let b = rng.random_range(spec.radius.0..=spec.radius.1);
        let margin = a.max(b);
        let cy = rng.random_range(margin..=(n as f64 - margin));
        let cx = rng.random_range(margin..=(n as f64 - margin));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = angle.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    mask[y * n + x] = 1.0;
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let (fy, fx) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let (py, px) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let tau_n = std::f64::consts::TAU / n as f64;
    let mut image = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let wave = spec.undulation
                * 0.5
                * ((fy * tau_n * y as f64 + py).sin() + (fx * tau_n * x as f64 + px).sin());
            let base = if mask[y * n + x] == 1.0 {
                spec.foreground
            } else {
                spec.background + wave
            };
            let jitter = if spec.noise_std > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            image.push((base + stain + jitter).clamp(0.0, 1.0));
        }
    }
    Patch::new(
        Tensor::new(vec![1, n, n], image)?,
        Tensor::new(vec![1, n, n], mask)?,
        patient_id,
    )
}

/// Generates a patch with ground truth equal to the union of its blobs.
pub fn generate_patch<R: Rng + ?Sized>(rng: &mut R, spec: &TextureSpec) -> Result<Patch> {
    render(rng, spec, 0.0, 0)
}

/// `patients × per_patient` patches; each patient is a contiguous group
/// sharing an intensity offset and a texture seed derived from `seed`.
pub fn generate_cohort(
    spec: &TextureSpec,
    patients: usize,
    per_patient: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(patients * per_patient);
    for pid in 0..patients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pid as u64 + 1);
        let stain = if spec.patient_jitter > 0.0 {
            rng.random_range(-spec.patient_jitter..=spec.patient_jitter)
        } else {
            0.0
        };
        for _ in 0..per_patient {
            out.push(render(&mut rng, spec, stain, pid as u32)?);
        }
    }
    Ok(out)
}
