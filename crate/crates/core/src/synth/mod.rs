//! Synthetic tissue-like patches, shift augmentations, patient-disjoint
//! splits and the augmented reference set used for distance measurement.

mod augment;
mod io;
mod patch;
mod refset;
mod split;

pub use augment::{
    apply_augmentation, augment_image, gaussian_kernel_1d, motion_kernel, AugKind, Augmentation,
};
pub use io::{read_patches, write_patches, PATCH_MAGIC};
pub use patch::{generate_cohort, generate_patch, Patch, TextureSpec};
pub use refset::{build_reference_set, reference_pool, ReferenceSet};
pub use split::{split_by_patient, DatasetSplits};

/// `1000 / 255²`: the 8-bit noise variance limit expressed on a `[0, 1]` scale.
pub const NOISE_VAR_LIMIT: f64 = 1000.0 / (255.0 * 255.0);
