//! Asymmetric encoder/decoder.
//!
//! The encoder embeds visible keypoints only and runs `n_enc` blocks over
//! slices of surviving frames. The decoder projects latents to its own width,
//! fills every hidden `(frame, joint)` with the mask token, adds its own
//! positional tables, runs `n_dec` blocks over slices of all frames and maps
//! each token to two coordinates with a linear head.

use std::ops::Range;

use crate::error::{MsaeError, Result};
use crate::masking::MaskPlan;
use crate::model::block::{stack_backward, stack_forward, BlockCache};
use crate::model::layers::{linear, linear_backward};
use crate::model::params::ModelParams;
use crate::model::scalar::Scalar;
use crate::model::stse::{check_positions, slice_ids, stse_backward, stse_forward};
use crate::model::tokens::{groups_of, TokenSet};

pub(crate) struct EncoderPass<T> {
    pub latent: Vec<T>,
    pub slices: Vec<usize>,
    groups: Vec<Range<usize>>,
    caches: Vec<BlockCache<T>>,
}

pub(crate) fn encoder_fwd<T: Scalar>(
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    params: &ModelParams<T>,
) -> Result<EncoderPass<T>> {
    let cfg = &params.config;
    if positions.is_empty() {
        return Err(MsaeError::EmptyVisible { visible: 0, frames_per_slice: cfg.frames_per_slice });
    }
    check_positions(positions, cfg.max_frames, cfg.joints)?;
    let slices = slice_ids(positions, cfg.frames_per_slice)?;
    let groups = groups_of(&slices);
    let x = stse_forward(coords, positions, &params.data, &params.layout, cfg.d_enc);
    let (latent, caches) = stack_forward(x, &groups, &params.data, &params.layout.enc_blocks);
    Ok(EncoderPass { latent, slices, groups, caches })
}

pub(crate) fn encoder_bwd<T: Scalar>(
    dlatent: Vec<T>,
    pass: &EncoderPass<T>,
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    params: &ModelParams<T>,
    grad: &mut [T],
) {
    let layout = &params.layout;
    let dx = stack_backward(dlatent, &pass.caches, &pass.groups, &params.data, &layout.enc_blocks, grad);
    stse_backward(&dx, coords, positions, layout, params.config.d_enc, grad);
}

/// Runs the encoder on visible keypoints; one latent token per input.
pub fn encoder_forward<T: Scalar>(
    coords: &[[f64; 2]],
    positions: &[(usize, usize)],
    params: &ModelParams<T>,
) -> Result<TokenSet<T>> {
    if coords.len() != positions.len() {
        return Err(MsaeError::InvalidSequence(format!(
            "{} coordinates for {} positions",
            coords.len(),
            positions.len()
        )));
    }
    let pass = encoder_fwd(coords, positions, params)?;
    TokenSet::new(pass.latent, params.config.d_enc, positions.to_vec(), pass.slices)
}

pub(crate) struct DecoderPass<T> {
    /// `T*J × 2`, frame-major.
    pub out: Vec<T>,
    /// Grid row of each latent token.
    rows: Vec<usize>,
    /// True for grid rows fed by the mask token.
    filled: Vec<bool>,
    groups: Vec<Range<usize>>,
    caches: Vec<BlockCache<T>>,
    hidden: Vec<T>,
}

pub(crate) fn decoder_fwd<T: Scalar>(
    latent: &[T],
    positions: &[(usize, usize)],
    plan: &MaskPlan,
    params: &ModelParams<T>,
) -> Result<DecoderPass<T>> {
    let cfg = &params.config;
    let layout = &params.layout;
    let p = &params.data;
    let (frames, joints) = (plan.frames, plan.joints);
    plan.check_shape(frames, cfg.joints)?;
    if frames > cfg.max_frames {
        return Err(MsaeError::PositionOutOfRange { frame: frames - 1, joint: 0 });
    }
    if frames % cfg.frames_per_slice != 0 {
        return Err(MsaeError::SliceMisaligned { len: frames, frames_per_slice: cfg.frames_per_slice });
    }
    let hidden_mask = plan.indicator();
    let rows: Vec<usize> = positions.iter().map(|&(f, j)| f * joints + j).collect();
    if let Some(&r) = rows.iter().find(|&&r| r >= hidden_mask.len() || hidden_mask[r]) {
        return Err(MsaeError::PlanMismatch {
            plan_frames: frames,
            plan_joints: joints,
            frames: r / joints + 1,
            joints,
        });
    }

    let dd = cfg.d_dec;
    let n = frames * joints;
    let proj = linear(
        latent,
        positions.len(),
        cfg.d_enc,
        &p[layout.dec_proj_weight.range()],
        dd,
        Some(&p[layout.dec_proj_bias.range()]),
    );
    let mask_token = &p[layout.mask_token.range()];
    let fpos = &p[layout.dec_frame_pos.range()];
    let jpos = &p[layout.dec_joint_pos.range()];
    let mut x = vec![T::zero(); n * dd];
    let mut filled = vec![true; n];
    for (i, &r) in rows.iter().enumerate() {
        x[r * dd..(r + 1) * dd].copy_from_slice(&proj[i * dd..(i + 1) * dd]);
        filled[r] = false;
    }
    for r in 0..n {
        let (f, j) = (r / joints, r % joints);
        let row = &mut x[r * dd..(r + 1) * dd];
        for c in 0..dd {
            if filled[r] {
                row[c] = mask_token[c];
            }
            row[c] += fpos[f * dd + c] + jpos[j * dd + c];
        }
    }
    let slice_len = cfg.frames_per_slice * joints;
    let groups: Vec<Range<usize>> = (0..frames / cfg.frames_per_slice)
        .map(|s| s * slice_len..(s + 1) * slice_len)
        .collect();
    let (hidden, caches) = stack_forward(x, &groups, p, &layout.dec_blocks);
    let out = linear(
        &hidden,
        n,
        dd,
        &p[layout.head_weight.range()],
        2,
        Some(&p[layout.head_bias.range()]),
    );
    Ok(DecoderPass { out, rows, filled, groups, caches, hidden })
}

/// Returns the gradient with respect to the latent tokens.
pub(crate) fn decoder_bwd<T: Scalar>(
    dout: &[T],
    pass: &DecoderPass<T>,
    latent: &[T],
    joints: usize,
    params: &ModelParams<T>,
    grad: &mut [T],
) -> Vec<T> {
    let cfg = &params.config;
    let layout = &params.layout;
    let p = &params.data;
    let dd = cfg.d_dec;
    let n = pass.filled.len();
    let dhidden = linear_backward(dout, &pass.hidden, n, dd, 2, p, layout.head_weight, Some(layout.head_bias), grad);
    let dx = stack_backward(dhidden, &pass.caches, &pass.groups, p, &layout.dec_blocks, grad);
    for r in 0..n {
        let (f, j) = (r / joints, r % joints);
        let row = &dx[r * dd..(r + 1) * dd];
        for c in 0..dd {
            grad[layout.dec_frame_pos.offset + f * dd + c] += row[c];
            grad[layout.dec_joint_pos.offset + j * dd + c] += row[c];
            if pass.filled[r] {
                grad[layout.mask_token.offset + c] += row[c];
            }
        }
    }
    let mut dproj = vec![T::zero(); pass.rows.len() * dd];
    for (i, &r) in pass.rows.iter().enumerate() {
        dproj[i * dd..(i + 1) * dd].copy_from_slice(&dx[r * dd..(r + 1) * dd]);
    }
    linear_backward(
        &dproj,
        latent,
        pass.rows.len(),
        cfg.d_enc,
        dd,
        p,
        layout.dec_proj_weight,
        Some(layout.dec_proj_bias),
        grad,
    )
}

/// Reconstructs the full `T × J` coordinate grid (frame-major) from encoder
/// latents placed according to `plan`.
pub fn decoder_forward<T: Scalar>(
    latent: &TokenSet<T>,
    plan: &MaskPlan,
    params: &ModelParams<T>,
) -> Result<Vec<[T; 2]>> {
    if latent.width != params.config.d_enc {
        return Err(MsaeError::InvalidSequence(format!(
            "latent width {} differs from d_enc {}",
            latent.width, params.config.d_enc
        )));
    }
    let pass = decoder_fwd(&latent.tokens, &latent.positions, plan, params)?;
    Ok(pass.out.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}
