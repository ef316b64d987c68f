//! Spatio-temporal segment encoding: keypoint coordinates become tokens.
//!
//! `token = W_proj · (x, y) + frame_pos[frame] + joint_pos[joint]`, and each
//! token is assigned the time slice of its frame. Slices are formed over the
//! distinct frames actually present, so a temporally masked sequence is cut
//! into slices of `F` surviving frames.

use crate::error::{MsaeError, Result};
use crate::model::params::{Layout, ModelParams};
use crate::model::scalar::Scalar;
use crate::model::tokens::TokenSet;
use crate::skeleton::build_slice_map;

/// Slice id per token for positions ordered by frame.
pub(crate) fn slice_ids(positions: &[(usize, usize)], frames_per_slice: usize) -> Result<Vec<usize>> {
    if positions.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(MsaeError::InvalidSequence("token positions must be ordered by frame".into()));
    }
    let mut frames: Vec<usize> = positions.iter().map(|p| p.0).collect();
    frames.dedup();
    let map = build_slice_map(&frames, frames_per_slice)?;
    Ok(positions
        .iter()
        .map(|p| map.slice_for(p.0).expect("frame is in its own slice map"))
        .collect())
}

pub(crate) fn check_positions(
    positions: &[(usize, usize)],
    max_frames: usize,
    joints: usize,
) -> Result<()> {
    match positions.iter().find(|&&(f, j)| f >= max_frames || j >= joints) {
        Some(&(frame, joint)) => Err(MsaeError::PositionOutOfRange { frame, joint }),
        None => Ok(()),
    }
}

pub(crate) fn stse_forward<T: Scalar>(
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    params: &[T],
    layout: &Layout,
    width: usize,
) -> Vec<T> {
    let w = &params[layout.stse_coord_proj.range()];
    let fpos = &params[layout.stse_frame_pos.range()];
    let jpos = &params[layout.stse_joint_pos.range()];
    let mut out = vec![T::zero(); positions.len() * width];
    for (i, (&(f, j), c)) in positions.iter().zip(coords).enumerate() {
        let (x, y) = (T::of(c[0]), T::of(c[1]));
        let row = &mut out[i * width..(i + 1) * width];
        for (k, v) in row.iter_mut().enumerate() {
            *v = w[2 * k] * x + w[2 * k + 1] * y + fpos[f * width + k] + jpos[j * width + k];
        }
    }
    out
}

pub(crate) fn stse_backward<T: Scalar>(
    dtok: &[T],
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    layout: &Layout,
    width: usize,
    grad: &mut [T],
) {
    let (w0, f0, j0) = (
        layout.stse_coord_proj.offset,
        layout.stse_frame_pos.offset,
        layout.stse_joint_pos.offset,
    );
    for (i, (&(f, j), c)) in positions.iter().zip(coords).enumerate() {
        let (x, y) = (T::of(c[0]), T::of(c[1]));
        for k in 0..width {
            let g = dtok[i * width + k];
            grad[w0 + 2 * k] += g * x;
            grad[w0 + 2 * k + 1] += g * y;
            grad[f0 + f * width + k] += g;
            grad[j0 + j * width + k] += g;
        }
    }
}

/// Embeds visible keypoints with the encoder's projection and positional
/// tables.
pub fn stse_encode<T: Scalar>(
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    params: &ModelParams<T>,
) -> Result<TokenSet<T>> {
    let cfg = &params.config;
    if coords.len() != positions.len() {
        return Err(MsaeError::InvalidSequence(format!(
            "{} coordinates for {} positions",
            coords.len(),
            positions.len()
        )));
    }
    check_positions(positions, cfg.max_frames, cfg.joints)?;
    let slices = slice_ids(positions, cfg.frames_per_slice)?;
    let tokens = stse_forward(coords, positions, &params.data, &params.layout, cfg.d_enc);
    TokenSet::new(tokens, cfg.d_enc, positions.to_vec(), slices)
}
