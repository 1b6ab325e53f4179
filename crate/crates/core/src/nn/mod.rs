//! Tiny same-resolution convolutional segmenter with exact gradients.

mod adam;
mod arch;
mod conv;
mod loss;

pub use adam::AdamState;
pub use arch::{Activation, Arch, ConvSpec, ModelParams, FOREGROUND_PRIOR, LEAKY_SLOPE};
pub use conv::{loss_and_gradient, model_backward, model_forward};
pub use loss::{bce_with_logits, sigmoid, softplus};
