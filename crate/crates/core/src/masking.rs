//! Two-stage spatio-temporal masking.
//!
//! Stage one removes whole frames; stage two hides a fixed number of joints
//! inside every surviving frame, drawn independently per frame. The plan
//! keeps both the masked and the visible frame indices so the decoder can
//! put every token back in place.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};
use crate::rng;
use crate::skeleton::SkeletonSequence;

pub const DEFAULT_TEMPORAL_RATIO: f64 = 0.25;
pub const DEFAULT_SPATIAL_RATIO: f64 = 1.0 / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "J")]
    pub joints: usize,
    #[serde(rename = "F")]
    pub frames_per_slice: usize,
    pub r_t: f64,
    pub r_s: f64,
    pub masked_frames: Vec<usize>,
    pub visible_frames: Vec<usize>,
    /// Aligned with `visible_frames`.
    pub masked_joints_per_visible_frame: Vec<Vec<usize>>,
    pub seed: u64,
}

/// `floor(ratio * n)`, tolerant of ratios like 1/3 that are not exact in
/// binary.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Number of frames left visible after temporal masking, rounded down to a
/// whole number of slices.
pub fn visible_frame_count(frames: usize, frames_per_slice: usize, r_t: f64) -> usize {
    let visible = frames - masked_count(r_t, frames);
    visible - visible % frames_per_slice.max(1)
}

/// Seed for one bout's plan in a given epoch.
pub fn plan_seed(run_seed: u64, bout_id: &str, epoch: u64) -> u64 {
    rng::derive_seed(run_seed, &[rng::hash_str(bout_id), epoch])
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(MsaeError::Config(format!("{name} must lie in [0, 1), got {r}")))
    }
}

pub fn plan_mask(
    frames: usize,
    joints: usize,
    frames_per_slice: usize,
    r_t: f64,
    r_s: f64,
    seed: u64,
) -> Result<MaskPlan> {
    check_ratio("r_t", r_t)?;
    check_ratio("r_s", r_s)?;
    if frames_per_slice == 0 || joints == 0 {
        return Err(MsaeError::Config("F and J must be positive".into()));
    }
    let visible = visible_frame_count(frames, frames_per_slice, r_t);
    if frames < frames_per_slice || visible < frames_per_slice {
        return Err(MsaeError::EmptyVisible {
            visible,
            frames_per_slice,
        });
    }

    let mut rng = rng::stream(seed, &[rng::hash_str("mask")]);
    let mut is_masked = vec![false; frames];
    for f in index::sample(&mut rng, frames, frames - visible) {
        is_masked[f] = true;
    }
    let (masked_frames, visible_frames): (Vec<usize>, Vec<usize>) =
        (0..frames).partition(|&f| is_masked[f]);

    let per_frame = masked_count(r_s, joints);
    let masked_joints_per_visible_frame = visible_frames
        .iter()
        .map(|_| {
            let mut js = index::sample(&mut rng, joints, per_frame).into_vec();
            js.sort_unstable();
            js
        })
        .collect();

    Ok(MaskPlan {
        frames,
        joints,
        frames_per_slice,
        r_t,
        r_s,
        masked_frames,
        visible_frames,
        masked_joints_per_visible_frame,
        seed,
    })
}

impl MaskPlan {
    /// A plan that hides nothing.
    pub fn unmasked(frames: usize, joints: usize, frames_per_slice: usize) -> Self {
        Self {
            frames,
            joints,
            frames_per_slice,
            r_t: 0.0,
            r_s: 0.0,
            masked_frames: Vec::new(),
            visible_frames: (0..frames).collect(),
            masked_joints_per_visible_frame: vec![Vec::new(); frames],
            seed: 0,
        }
    }

    pub fn check_shape(&self, frames: usize, joints: usize) -> Result<()> {
        let consistent = self.masked_frames.len() + self.visible_frames.len() == self.frames
            && self.masked_joints_per_visible_frame.len() == self.visible_frames.len();
        if self.frames != frames || self.joints != joints || !consistent {
            return Err(MsaeError::PlanMismatch {
                plan_frames: self.frames,
                plan_joints: self.joints,
                frames,
                joints,
            });
        }
        Ok(())
    }

    /// Frame-major `[T*J]` grid, true where the position is hidden.
    pub fn indicator(&self) -> Vec<bool> {
        let mut grid = vec![true; self.frames * self.joints];
        for (f, masked) in self.visible_frames.iter().zip(&self.masked_joints_per_visible_frame) {
            let row = &mut grid[f * self.joints..(f + 1) * self.joints];
            row.fill(false);
            for &j in masked {
                row[j] = true;
            }
        }
        grid
    }

    /// Visible `(frame, joint)` pairs, frame then joint ascending.
    pub fn visible_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (&f, masked) in self.visible_frames.iter().zip(&self.masked_joints_per_visible_frame) {
            let mut hidden = masked.iter().peekable();
            for j in 0..self.joints {
                if hidden.peek() == Some(&&j) {
                    hidden.next();
                } else {
                    out.push((f, j));
                }
            }
        }
        out
    }

    pub fn visible_token_count(&self) -> usize {
        self.masked_joints_per_visible_frame
            .iter()
            .map(|m| self.joints - m.len())
            .sum()
    }

    pub fn masked_position_count(&self) -> usize {
        self.frames * self.joints - self.visible_token_count()
    }
}

pub fn mask_indicator(plan: &MaskPlan) -> Vec<bool> {
    plan.indicator()
}

/// Coordinates and positions of every unmasked joint of every visible frame.
pub fn gather_visible(
    seq: &SkeletonSequence,
    plan: &MaskPlan,
) -> Result<(Vec<[f64; 2]>, Vec<(usize, usize)>)> {
    plan.check_shape(seq.frames(), seq.joints())?;
    let positions = plan.visible_positions();
    let coords = positions.iter().map(|&(f, j)| seq.point(f, j)).collect();
    Ok((coords, positions))
}

/// Keeps `original` wherever the plan left a joint visible and takes
/// `predicted` (frame-major, full grid) everywhere else.
pub fn scatter_restore(
    predicted: &[[f64; 2]],
    original: &SkeletonSequence,
    plan: &MaskPlan,
) -> Result<SkeletonSequence> {
    plan.check_shape(original.frames(), original.joints())?;
    if predicted.len() != original.coords().len() {
        return Err(MsaeError::PlanMismatch {
            plan_frames: predicted.len() / original.joints().max(1),
            plan_joints: original.joints(),
            frames: original.frames(),
            joints: original.joints(),
        });
    }
    let coords = plan
        .indicator()
        .iter()
        .zip(predicted.iter().zip(original.coords()))
        .map(|(&hidden, (p, o))| if hidden { *p } else { *o })
        .collect();
    original.with_coords(coords)
}
