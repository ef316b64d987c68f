//! Skeleton sequences, per-bout normalization and the frame→slice map.

use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};

/// Lengths below this are treated as a collapsed skeleton.
const MIN_SEGMENT: f64 = 1e-12;

/// One bout: `frames × joints` 2-D keypoints stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub bout_id: String,
    pub fps: f64,
    frames: usize,
    joints: usize,
    coords: Vec<[f64; 2]>,
}

impl SkeletonSequence {
    pub fn new(
        bout_id: impl Into<String>,
        fps: f64,
        frames: usize,
        joints: usize,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if frames < 1 {
            return Err(MsaeError::InvalidSequence("a bout needs at least one frame".into()));
        }
        if joints < 2 {
            return Err(MsaeError::InvalidSequence(format!(
                "a bout needs at least two joints, got {joints}"
            )));
        }
        if coords.len() != frames * joints {
            return Err(MsaeError::InvalidSequence(format!(
                "expected {} points for {frames}x{joints}, got {}",
                frames * joints,
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(MsaeError::InvalidSequence(format!(
                "non-finite coordinate at frame {}, joint {}",
                i / joints,
                i % joints
            )));
        }
        Ok(Self {
            bout_id: bout_id.into(),
            fps,
            frames,
            joints,
            coords,
        })
    }

    /// Builds a sequence from `[frame][joint] -> [x, y]` rows.
    pub fn from_frames(bout_id: impl Into<String>, fps: f64, rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let frames = rows.len();
        let joints = rows.first().map_or(0, Vec::len);
        if let Some(f) = rows.iter().position(|r| r.len() != joints) {
            return Err(MsaeError::InvalidSequence(format!(
                "frame {f} has {} joints, frame 0 has {joints}",
                rows[f].len()
            )));
        }
        Self::new(bout_id, fps, frames, joints, rows.into_iter().flatten().collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn point(&self, frame: usize, joint: usize) -> [f64; 2] {
        self.coords[frame * self.joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[[f64; 2]] {
        &self.coords[frame * self.joints..(frame + 1) * self.joints]
    }

    /// All points, frame-major.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Same identity and shape, new coordinates.
    pub fn with_coords(&self, coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(self.bout_id.clone(), self.fps, self.frames, self.joints, coords)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max)
    }

    /// Pads by repeating the last frame until the frame count is a multiple
    /// of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let rem = self.frames % multiple.max(1);
        if rem == 0 {
            return self.clone();
        }
        let extra = multiple - rem;
        let mut coords = self.coords.clone();
        let last = self.frame(self.frames - 1).to_vec();
        for _ in 0..extra {
            coords.extend_from_slice(&last);
        }
        Self {
            bout_id: self.bout_id.clone(),
            fps: self.fps,
            frames: self.frames + extra,
            joints: self.joints,
            coords,
        }
    }

    /// Keeps only the first `frames` frames.
    pub fn truncate(&self, frames: usize) -> Self {
        let frames = frames.clamp(1, self.frames);
        Self {
            bout_id: self.bout_id.clone(),
            fps: self.fps,
            frames,
            joints: self.joints,
            coords: self.coords[..frames * self.joints].to_vec(),
        }
    }
}

/// The similarity transform removed by [`normalize_bout`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Frame-0 root position in raw units.
    pub translation: [f64; 2],
    /// Frame-0 heading in radians, in (−π, π].
    pub rotation: f64,
    /// Raw units per normalized unit (frame-0 mean segment length).
    pub scale: f64,
}

impl NormalizationRecord {
    pub const IDENTITY: Self = Self {
        translation: [0.0, 0.0],
        rotation: 0.0,
        scale: 1.0,
    };
}

fn mean_segment_length(frame: &[[f64; 2]]) -> f64 {
    let total: f64 = frame
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum();
    total / (frame.len() - 1) as f64
}

/// Anchors a bout to its first frame: root joint at the origin, heading
/// (joint 0 → joint 1) along +x, mean segment length 1.
pub fn normalize_bout(seq: &SkeletonSequence) -> Result<(SkeletonSequence, NormalizationRecord)> {
    let first = seq.frame(0);
    let scale = mean_segment_length(first);
    if !(scale >= MIN_SEGMENT) {
        return Err(MsaeError::DegenerateBout(scale));
    }
    let root = first[0];
    let mut rotation = (first[1][1] - root[1]).atan2(first[1][0] - root[0]);
    if rotation <= -std::f64::consts::PI {
        rotation = std::f64::consts::PI;
    }
    let (sin, cos) = rotation.sin_cos();
    let coords = seq
        .coords()
        .iter()
        .map(|p| {
            let dx = p[0] - root[0];
            let dy = p[1] - root[1];
            [(cos * dx + sin * dy) / scale, (-sin * dx + cos * dy) / scale]
        })
        .collect();
    let rec = NormalizationRecord {
        translation: root,
        rotation,
        scale,
    };
    Ok((seq.with_coords(coords)?, rec))
}

/// Inverse of [`normalize_bout`]: scale, rotate, then translate.
pub fn denormalize(seq: &SkeletonSequence, rec: &NormalizationRecord) -> Result<SkeletonSequence> {
    if !(rec.scale > 0.0) {
        return Err(MsaeError::InvalidSequence(format!(
            "normalization scale must be positive, got {}",
            rec.scale
        )));
    }
    seq.with_coords(denormalize_points(seq.coords(), rec))
}

pub fn denormalize_points(points: &[[f64; 2]], rec: &NormalizationRecord) -> Vec<[f64; 2]> {
    let (sin, cos) = rec.rotation.sin_cos();
    points
        .iter()
        .map(|p| {
            let x = p[0] * rec.scale;
            let y = p[1] * rec.scale;
            [
                cos * x - sin * y + rec.translation[0],
                sin * x + cos * y + rec.translation[1],
            ]
        })
        .collect()
}

/// Partition of an ordered frame list into consecutive, non-overlapping
/// slices of `frames_per_slice` frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceMap {
    pub frames_per_slice: usize,
    /// The frame indices the map was built over, in order.
    pub frames: Vec<usize>,
    /// Slice index for each entry of `frames`.
    pub slice_of_frame: Vec<usize>,
    pub frames_of_slice: Vec<Vec<usize>>,
}

impl SliceMap {
    pub fn len(&self) -> usize {
        self.frames_of_slice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames_of_slice.is_empty()
    }

    /// Slice containing absolute frame index `frame`, if it is in the map.
    pub fn slice_for(&self, frame: usize) -> Option<usize> {
        self.frames
            .binary_search(&frame)
            .ok()
            .map(|i| self.slice_of_frame[i])
    }
}

pub fn build_slice_map(frame_indices: &[usize], frames_per_slice: usize) -> Result<SliceMap> {
    if frames_per_slice == 0 || frame_indices.len() % frames_per_slice != 0 {
        return Err(MsaeError::SliceMisaligned {
            len: frame_indices.len(),
            frames_per_slice,
        });
    }
    if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MsaeError::InvalidSequence(
            "slice map frame indices must be strictly ascending".into(),
        ));
    }
    Ok(SliceMap {
        frames_per_slice,
        frames: frame_indices.to_vec(),
        slice_of_frame: (0..frame_indices.len()).map(|i| i / frames_per_slice).collect(),
        frames_of_slice: frame_indices.chunks(frames_per_slice).map(<[usize]>::to_vec).collect(),
    })
}
