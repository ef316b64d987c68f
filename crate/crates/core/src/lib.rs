//! Masked skeleton-sequence autoencoder: data handling, masking, the
//! slice-grouped transformer with hand-written gradients, and training.

pub mod datagen;
pub mod error;
pub mod io;
pub mod masking;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod skeleton;
pub mod training;

pub use datagen::{generate_bout, generate_dataset, SynthParams};
pub use error::{MsaeError, Result};
pub use masking::{gather_visible, mask_indicator, plan_mask, scatter_restore, MaskPlan};
pub use model::{LossOn, ModelConfig, ModelParams, Scalar, TokenSet};
pub use skeleton::{build_slice_map, denormalize, normalize_bout, NormalizationRecord, SkeletonSequence, SliceMap};
pub use training::{train, RunConfig, TrainConfig, TrainOptions, TrainSummary};
