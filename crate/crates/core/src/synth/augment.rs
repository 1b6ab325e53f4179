use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::patch::Patch;
use crate::tensor::Tensor;

/// Image-only perturbation. Masks are never touched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    Identity,
    GaussianBlur {
        kernel: usize,
        sigma: f64,
    },
    /// Line kernel of random odd length in `3..=limit` and an angle drawn
    /// from `seed`.
    MotionBlur {
        limit: usize,
        seed: u64,
    },
    Brightness {
        factor: f64,
    },
    /// Additive zero-mean noise; the variance of each application is drawn
    /// uniformly from `(0, var_limit]`.
    GaussianNoise {
        var_limit: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Identity,
    GaussianBlur,
    MotionBlur,
    Brightness,
    GaussianNoise,
}

impl Augmentation {
    pub fn kind(&self) -> AugKind {
        match self {
            Augmentation::Identity => AugKind::Identity,
            Augmentation::GaussianBlur { .. } => AugKind::GaussianBlur,
            Augmentation::MotionBlur { .. } => AugKind::MotionBlur,
            Augmentation::Brightness { .. } => AugKind::Brightness,
            Augmentation::GaussianNoise { .. } => AugKind::GaussianNoise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Augmentation::GaussianBlur { kernel, sigma } => {
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::invalid(
                        "kernel",
                        format!("must be odd and >= 1, got {kernel}"),
                    ));
                }
                if sigma.is_nan() || sigma <= 0.0 {
                    return Err(Error::invalid("sigma", "must be positive"));
                }
            }
            Augmentation::MotionBlur { limit, .. } => {
                if limit < 3 || limit % 2 == 0 {
                    return Err(Error::invalid(
                        "limit",
                        format!("must be odd and >= 3, got {limit}"),
                    ));
                }
            }
            Augmentation::Brightness { factor } => {
                if factor.is_nan() || factor <= 0.0 {
                    return Err(Error::invalid("factor", "must be positive"));
                }
            }
            Augmentation::GaussianNoise { var_limit } => {
                if var_limit.is_nan() || var_limit < 0.0 {
                    return Err(Error::invalid("var_limit", "must be non-negative"));
                }
            }
            Augmentation::Identity => {}
        }
        Ok(())
    }
}

/// Normalized discrete Gaussian weights of odd length `kernel`.
pub fn gaussian_kernel_1d(kernel: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel / 2) as f64;
    let mut w: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Normalized square line kernel for a motion blur drawn from `seed`.
pub fn motion_kernel(limit: usize, seed: u64) -> (usize, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = (limit - 3) / 2 + 1;
    let k = 3 + 2 * rng.random_range(0..sizes);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let r = (k / 2) as f64;
    let mut w = vec![0.0; k * k];
    let steps = 4 * k;
    for i in 0..=steps {
        let t = -r + 2.0 * r * i as f64 / steps as f64;
        let y = (r + t * s).round() as usize;
        let x = (r + t * c).round() as usize;
        w[y.min(k - 1) * k + x.min(k - 1)] = 1.0;
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    (k, w)
}

/// Reflect-101 index into `0..n` (edge pixel not repeated).
#[inline]
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn separable_blur(image: &[f64], side: usize, w: &[f64]) -> Vec<f64> {
    let r = (w.len() / 2) as isize;
    let mut tmp = vec![0.0; image.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = w
                .iter()
                .enumerate()
                .map(|(j, &wj)| wj * image[y * side + reflect(x as isize + j as isize - r, side)])
                .sum();
        }
    }
    let mut out = vec![0.0; image.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = w
                .iter()
                .enumerate()
                .map(|(j, &wj)| wj * tmp[reflect(y as isize + j as isize - r, side) * side + x])
                .sum();
        }
    }
    out
}

fn filter2d(image: &[f64], side: usize, k: usize, w: &[f64]) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; image.len()];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for ky in 0..k {
                let sy = reflect(y as isize + ky as isize - r, side);
                for kx in 0..k {
                    let sx = reflect(x as isize + kx as isize - r, side);
                    acc += w[ky * k + kx] * image[sy * side + sx];
                }
            }
            out[y * side + x] = acc;
        }
    }
    out
}

/// Applies `aug` to a square single-channel image, clamping to `[0, 1]`.
pub fn augment_image<R: Rng + ?Sized>(
    image: &[f64],
    side: usize,
    aug: &Augmentation,
    rng: &mut R,
) -> Result<Vec<f64>> {
    aug.validate()?;
    if image.len() != side * side {
        return Err(Error::ShapeMismatch {
            expected: vec![side, side],
            actual: vec![image.len()],
        });
    }
    let mut out = match *aug {
        Augmentation::Identity => image.to_vec(),
        Augmentation::GaussianBlur { kernel, sigma } => {
            separable_blur(image, side, &gaussian_kernel_1d(kernel, sigma))
        }
        Augmentation::MotionBlur { limit, seed } => {
            let (k, w) = motion_kernel(limit, seed);
            filter2d(image, side, k, &w)
        }
        Augmentation::Brightness { factor } => image.iter().map(|v| v * factor).collect(),
        Augmentation::GaussianNoise { var_limit } => {
            if var_limit == 0.0 {
                image.to_vec()
            } else {
                // (0, limit]: 1 - U[0,1) never hits zero
                let variance = var_limit * (1.0 - rng.random::<f64>());
                let normal = Normal::new(0.0, variance.sqrt())
                    .map_err(|e| Error::invalid("var_limit", e.to_string()))?;
                image.iter().map(|v| v + normal.sample(rng)).collect()
            }
        }
    };
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Augments the patch image; the mask is carried over untouched.
pub fn apply_augmentation<R: Rng + ?Sized>(
    patch: &Patch,
    aug: &Augmentation,
    rng: &mut R,
) -> Result<Patch> {
    let side = patch.side();
    let image = augment_image(patch.image.data(), side, aug, rng)?;
    Ok(Patch {
        image: Tensor::new(patch.image.shape().to_vec(), image)?,
        mask: patch.mask.clone(),
        patient_id: patch.patient_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_patch, TextureSpec};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    fn sample_patch() -> Patch {
        generate_patch(&mut rng(), &TextureSpec::tissue(16)).unwrap()
    }

    fn constant_patch(side: usize, v: f64) -> Patch {
        Patch::new(
            Tensor::filled(vec![1, side, side], v),
            Tensor::zeros(vec![1, side, side]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn unit_brightness_is_identity() {
        let p = sample_patch();
        let q =
            apply_augmentation(&p, &Augmentation::Brightness { factor: 1.0 }, &mut rng()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        for &(k, s) in &[(3, 1.0), (5, 0.5), (19, 8.0)] {
            let p = constant_patch(12, 0.37);
            let q = apply_augmentation(
                &p,
                &Augmentation::GaussianBlur {
                    kernel: k,
                    sigma: s,
                },
                &mut rng(),
            )
            .unwrap();
            assert!(q.image.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn blur_of_impulse_gives_kernel_centre() {
        // Direct 2-D Gaussian over the 3x3 offsets, normalized, then the
        // impulse response at the centre is the centre weight.
        let sigma: f64 = 1.0;
        let mut k2 = [[0.0; 3]; 3];
        let mut total = 0.0;
        for (y, row) in k2.iter_mut().enumerate() {
            for (x, w) in row.iter_mut().enumerate() {
                let (dy, dx) = (y as f64 - 1.0, x as f64 - 1.0);
                *w = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                total += *w;
            }
        }
        let centre = k2[1][1] / total;
        let neighbour = k2[0][1] / total;

        let mut image = vec![0.0; 25];
        image[12] = 1.0;
        let out = augment_image(
            &image,
            5,
            &Augmentation::GaussianBlur { kernel: 3, sigma },
            &mut rng(),
        )
        .unwrap();
        assert!((out[12] - centre).abs() < 1e-15);
        assert!((out[7] - neighbour).abs() < 1e-15);
        assert!((centre - 0.2041799555716581).abs() < 1e-15);
    }

    #[test]
    fn kernels_are_normalized() {
        for &(k, s) in &[(1, 1.0), (3, 0.5), (19, 4.0)] {
            let sum: f64 = gaussian_kernel_1d(k, s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        for seed in 0..20 {
            let (k, w) = motion_kernel(29, seed);
            assert!(k % 2 == 1 && (3..=29).contains(&k));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = sample_patch();
        let q = apply_augmentation(
            &p,
            &Augmentation::GaussianNoise { var_limit: 0.0 },
            &mut rng(),
        )
        .unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn even_kernel_is_rejected() {
        let p = sample_patch();
        let err = apply_augmentation(
            &p,
            &Augmentation::GaussianBlur {
                kernel: 4,
                sigma: 1.0,
            },
            &mut rng(),
        );
        assert!(err.is_err());
        assert!(apply_augmentation(
            &p,
            &Augmentation::MotionBlur { limit: 4, seed: 0 },
            &mut rng()
        )
        .is_err());
        assert!(
            apply_augmentation(&p, &Augmentation::Brightness { factor: 0.0 }, &mut rng()).is_err()
        );
    }

    #[test]
    fn masks_untouched_and_images_clamped() {
        let p = sample_patch();
        let augs = [
            Augmentation::GaussianBlur {
                kernel: 3,
                sigma: 1.0,
            },
            Augmentation::MotionBlur { limit: 5, seed: 3 },
            Augmentation::Brightness { factor: 2.0 },
            Augmentation::GaussianNoise { var_limit: 0.5 },
        ];
        for aug in &augs {
            let q = apply_augmentation(&p, aug, &mut rng()).unwrap();
            assert!(p
                .mask
                .data()
                .iter()
                .zip(q.mask.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            assert!(q.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn reflection_covers_small_images() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(-9, 3), 1);
        assert_eq!(reflect(5, 1), 0);
        // a 19-wide kernel on a 4x4 image still preserves a constant
        let p = constant_patch(4, 0.5);
        let q = apply_augmentation(
            &p,
            &Augmentation::GaussianBlur {
                kernel: 19,
                sigma: 4.0,
            },
            &mut rng(),
        )
        .unwrap();
        assert!(q.image.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }
}
