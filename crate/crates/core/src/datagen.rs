//! Synthetic larval-zebrafish bouts: a travelling lateral wave along a
//! fixed-length midline, with slow heading drift and Gaussian keypoint noise.

use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};
use crate::rng;
use crate::skeleton::SkeletonSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    #[serde(rename = "J")]
    pub joints: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    pub fps: f64,
    /// Tail-beat frequency in Hz.
    pub tail_freq: f64,
    /// Peak lateral amplitude in body lengths.
    pub amp: f64,
    /// Spatial periods along the body.
    pub wave_number: f64,
    /// Heading change per frame, radians.
    pub heading_drift: f64,
    /// Keypoint noise standard deviation in body lengths.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            joints: 19,
            frames: 24,
            fps: 200.0,
            tail_freq: 25.0,
            amp: 0.2,
            wave_number: 0.5,
            heading_drift: 0.01,
            noise_sigma: 0.002,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.joints < 2 || self.frames < 1 {
            return Err(MsaeError::Config(format!(
                "synthetic bouts need J >= 2 and T >= 1, got J={} T={}",
                self.joints, self.frames
            )));
        }
        if !(self.amp >= 0.0 && self.noise_sigma >= 0.0 && self.fps > 0.0) {
            return Err(MsaeError::Config(
                "amp and noise_sigma must be non-negative and fps positive".into(),
            ));
        }
        Ok(())
    }

    /// Lateral offset of joint `k` at frame `t` before heading rotation.
    pub fn lateral_offset(&self, k: usize, t: usize) -> f64 {
        let u = k as f64 / (self.joints - 1) as f64;
        let phase = self.tail_freq * t as f64 / self.fps - self.wave_number * u;
        self.amp * u * u * (std::f64::consts::TAU * phase).sin()
    }
}

/// Generates one bout. Output depends only on `p`.
///
/// Consecutive joints are kept exactly `1/(J-1)` apart: each joint takes its
/// prescribed lateral offset and advances along the body axis by whatever
/// remains of the segment length. Where the wave is too steep for that, the
/// lateral step is clamped to the segment length.
pub fn generate_bout(p: &SynthParams) -> Result<SkeletonSequence> {
    p.validate()?;
    let seg = 1.0 / (p.joints - 1) as f64;
    let mut noise = rng::stream(p.seed, &[rng::hash_str("datagen")]);
    let mut coords = Vec::with_capacity(p.frames * p.joints);
    for t in 0..p.frames {
        let (sin, cos) = (p.heading_drift * t as f64).sin_cos();
        let mut x = 0.0;
        let mut y = p.lateral_offset(0, t);
        for k in 0..p.joints {
            if k > 0 {
                let dy = (p.lateral_offset(k, t) - y).clamp(-seg, seg);
                x += (seg * seg - dy * dy).max(0.0).sqrt();
                y += dy;
            }
            let mut pt = [cos * x - sin * y, sin * x + cos * y];
            if p.noise_sigma > 0.0 {
                pt[0] += p.noise_sigma * rng::gaussian(&mut noise);
                pt[1] += p.noise_sigma * rng::gaussian(&mut noise);
            }
            coords.push(pt);
        }
    }
    SkeletonSequence::new(format!("synth-{:016x}", p.seed), p.fps, p.frames, p.joints, coords)
}

/// `n` bouts around `base`. Bout `i` gets its own noise seed, and its
/// amplitude, tail-beat frequency and heading drift are scaled by factors
/// drawn uniformly from `[1 - jitter, 1 + jitter]`.
pub fn generate_dataset(base: &SynthParams, n: usize, jitter: f64) -> Result<Vec<SkeletonSequence>> {
    base.validate()?;
    if !(0.0..=1.0).contains(&jitter) {
        return Err(MsaeError::Config(format!("jitter must lie in [0, 1], got {jitter}")));
    }
    (0..n as u64)
        .map(|i| {
            let mut r = rng::stream(base.seed, &[rng::hash_str("dataset"), i]);
            let mut scale = || 1.0 + jitter * (2.0 * rng::open_unit(&mut r) - 1.0);
            generate_bout(&SynthParams {
                amp: base.amp * scale(),
                tail_freq: base.tail_freq * scale(),
                heading_drift: base.heading_drift * scale(),
                seed: rng::derive_seed(base.seed, &[i]),
                ..base.clone()
            })
        })
        .collect()
}
