//! The slice-grouped spatio-temporal transformer autoencoder.
//!
//! Tokens are single `(frame, joint)` keypoints. Attention runs inside time
//! slices of `F` consecutive frames; an inter-slice convolution carries
//! information between slices; a squeeze-excitation gate rescales channels.
//! The encoder sees visible keypoints only, the decoder sees the full grid
//! with a learned mask token at hidden positions.
//!
//! Every sub-module has an explicit forward pass that returns a cache and a
//! backward pass that accumulates into a flat gradient vector laid out like
//! [`ModelParams::data`].

mod autoencoder;
mod block;
mod gate;
mod iffa;
mod layers;
mod loss;
pub mod params;
mod pipeline;
pub mod scalar;
mod stga;
mod stse;
mod tokens;

use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};

pub use autoencoder::{decoder_forward, encoder_forward};
pub use block::sstformer_block;
pub use gate::conv_channel_attention;
pub use iffa::iffa;
pub use loss::{masked_mse, LossOn};
pub use params::{BlockLayout, Layout, ModelParams, Span, Stack, TensorSpec};
pub use pipeline::{bout_loss, embed_bout, forward_backward, predict_grid, BoutLoss};
pub use scalar::Scalar;
pub use stga::stga;
pub use stse::stse_encode;
pub use tokens::TokenSet;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    #[serde(rename = "J")]
    pub joints: usize,
    /// Frames per time slice.
    #[serde(rename = "F")]
    pub frames_per_slice: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Rows of the frame positional tables.
    #[serde(rename = "max_T")]
    pub max_frames: usize,
    pub iffa_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 19,
            frames_per_slice: 3,
            d_enc: 64,
            d_dec: 32,
            n_enc: 9,
            n_dec: 4,
            heads: 4,
            mlp_ratio: 4,
            max_frames: 512,
            iffa_kernel: 3,
        }
    }
}

impl ModelConfig {
    /// Full depth at narrow width, small enough to train on one core.
    pub fn tiny() -> Self {
        Self {
            d_enc: 16,
            d_dec: 16,
            heads: 2,
            mlp_ratio: 2,
            max_frames: 64,
            ..Self::default()
        }
    }

    /// Channel-gate bottleneck width.
    pub fn reduced_width(width: usize) -> usize {
        (width / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MsaeError::Config(m));
        if self.joints < 2 {
            return fail(format!("J must be at least 2, got {}", self.joints));
        }
        if self.frames_per_slice == 0 || self.max_frames < self.frames_per_slice {
            return fail(format!(
                "need 1 <= F <= max_T, got F={} max_T={}",
                self.frames_per_slice, self.max_frames
            ));
        }
        if self.heads == 0 || self.d_enc == 0 || self.d_dec == 0 || self.mlp_ratio == 0 {
            return fail("widths, heads and mlp_ratio must be positive".into());
        }
        if self.d_enc % self.heads != 0 || self.d_dec % self.heads != 0 {
            return fail(format!(
                "d_enc={} and d_dec={} must be divisible by heads={}",
                self.d_enc, self.d_dec, self.heads
            ));
        }
        if self.iffa_kernel % 2 == 0 {
            return fail(format!("iffa_kernel must be odd, got {}", self.iffa_kernel));
        }
        Ok(())
    }
}
