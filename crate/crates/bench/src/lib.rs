//! Fixtures shared by the benchmarks.

use msae_core::masking::plan_mask;
use msae_core::{generate_dataset, MaskPlan, ModelConfig, ModelParams, SkeletonSequence, SynthParams};

/// `n` synthetic bouts at the default shape (24 frames, 19 joints).
pub fn bouts(n: usize) -> Vec<SkeletonSequence> {
    generate_dataset(&SynthParams::default(), n, 0.25).expect("default synth params are valid")
}

/// One default-ratio plan per bout.
pub fn plans(bouts: &[SkeletonSequence], cfg: &ModelConfig) -> Vec<MaskPlan> {
    bouts
        .iter()
        .enumerate()
        .map(|(i, b)| plan_mask(b.frames(), b.joints(), cfg.frames_per_slice, 0.25, 1.0 / 3.0, i as u64).unwrap())
        .collect()
}

pub fn params(cfg: &ModelConfig) -> ModelParams<f32> {
    ModelParams::init(cfg, 0).expect("valid config")
}
