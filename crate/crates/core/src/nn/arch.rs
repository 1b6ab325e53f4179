use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Foreground share a freshly initialized model predicts everywhere.
pub const FOREGROUND_PRIOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z < 0.0 => LEAKY_SLOPE * z,
            _ => z,
        }
    }

    #[inline]
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z < 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }
}

/// Architecture descriptor: a chain of stride-1, zero-padded convolutions
/// mapping a single-channel patch to a single-channel logit map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub patch_size: usize,
    pub layers: Vec<ConvSpec>,
}

impl Arch {
    pub fn new(patch_size: usize, layers: Vec<ConvSpec>) -> Result<Self> {
        let arch = Self { patch_size, layers };
        arch.validate()?;
        Ok(arch)
    }

    /// The default segmenter: 1→8→8→1 channels, 3×3 kernels, leaky
    /// rectifiers between layers and raw logits out.
    pub fn segmenter(patch_size: usize) -> Self {
        let conv = |i, o, activation| ConvSpec {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            activation,
        };
        Self {
            patch_size,
            layers: vec![
                conv(1, 8, Activation::LeakyRelu),
                conv(8, 8, Activation::LeakyRelu),
                conv(8, 1, Activation::Identity),
            ],
        }
    }

    /// A single linear convolution, mostly useful in tests.
    pub fn single_conv(patch_size: usize, kernel: usize) -> Self {
        Self {
            patch_size,
            layers: vec![ConvSpec {
                in_channels: 1,
                out_channels: 1,
                kernel,
                activation: Activation::Identity,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size", "must be positive"));
        }
        let first = self.layers.first().ok_or(Error::Empty("layer list"))?;
        if first.in_channels != 1 {
            return Err(Error::invalid("layers", "first layer must take 1 channel"));
        }
        if self.layers.last().map(|l| l.out_channels) != Some(1) {
            return Err(Error::invalid("layers", "last layer must emit 1 channel"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::invalid("layers", "channel counts do not chain"));
            }
        }
        for layer in &self.layers {
            if layer.kernel % 2 == 0 {
                return Err(Error::invalid("kernel", "must be odd"));
            }
            if layer.out_channels == 0 {
                return Err(Error::invalid("layers", "zero output channels"));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvSpec::param_count).sum()
    }

    pub fn max_channels(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_channels.max(l.out_channels))
            .max()
            .unwrap_or(1)
    }
}

/// Model state: architecture plus the flat parameter vector.
///
/// Layout per layer is weights `[out][in][ky][kx]` followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Arch,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            theta: vec![0.0; n],
        }
    }

    /// He-uniform weights. First-layer biases center each filter on the
    /// mid-grey input level and the output bias starts at the logit of
    /// [`FOREGROUND_PRIOR`]; other biases are zero.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut theta = Vec::with_capacity(arch.param_count());
        let last = arch.layers.len() - 1;
        for (idx, layer) in arch.layers.iter().enumerate() {
            let fan_in = layer.in_channels * layer.kernel * layer.kernel;
            let bound = (6.0 / fan_in as f64).sqrt();
            let start = theta.len();
            theta.extend((0..layer.weight_count()).map(|_| rng.random_range(-bound..bound)));
            for o in 0..layer.out_channels {
                let bias = if idx == last {
                    (FOREGROUND_PRIOR / (1.0 - FOREGROUND_PRIOR)).ln()
                } else if idx == 0 {
                    let w = &theta[start + o * fan_in..start + (o + 1) * fan_in];
                    -0.5 * w.iter().sum::<f64>()
                } else {
                    0.0
                };
                theta.push(bias);
            }
        }
        Self { arch, theta }
    }

    /// Every parameter drawn uniformly from `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(arch: Arch, scale: f64, rng: &mut R) -> Self {
        let theta = (0..arch.param_count())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Self { arch, theta }
    }

    pub fn unflatten(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        let expected = arch.param_count();
        if theta.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: theta.len(),
            });
        }
        Ok(Self { arch, theta })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_aggregable_with(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
    }

    /// `(weight_start, bias_start)` offsets into `theta` for every layer.
    pub(crate) fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.arch.layers.len());
        let mut at = 0;
        for layer in &self.arch.layers {
            offsets.push((at, at + layer.weight_count()));
            at += layer.param_count();
        }
        offsets
    }
}
