//! Whole-bout passes: loss with exact gradients, prediction, embedding.

use rayon::prelude::*;

use crate::error::{MsaeError, Result};
use crate::masking::{gather_visible, MaskPlan};
use crate::model::autoencoder::{decoder_bwd, decoder_fwd, encoder_bwd, encoder_fwd};
use crate::model::loss::{mse_with_grad, LossOn};
use crate::model::params::ModelParams;
use crate::model::scalar::Scalar;
use crate::skeleton::SkeletonSequence;

fn targets<T: Scalar>(seq: &SkeletonSequence) -> Vec<T> {
    seq.coords().iter().flatten().map(|&v| T::of(v)).collect()
}

fn bout_pass<T: Scalar>(
    seq: &SkeletonSequence,
    plan: &MaskPlan,
    params: &ModelParams<T>,
    loss_on: LossOn,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    let (coords, positions) = gather_visible(seq, plan)?;
    let enc = encoder_fwd(&coords, &positions, params)?;
    let dec = decoder_fwd(&enc.latent, &positions, plan, params)?;
    let (loss, dout) = mse_with_grad(&dec.out, &targets(seq), &plan.indicator(), loss_on)?;
    if !want_grad {
        return Ok((loss, None));
    }
    let mut grad = vec![T::zero(); params.len()];
    let dlatent = decoder_bwd(&dout, &dec, &enc.latent, seq.joints(), params, &mut grad);
    encoder_bwd(dlatent, &enc, &coords, &positions, params, &mut grad);
    Ok((loss, Some(grad)))
}

/// Reconstruction loss of one bout under `plan`.
pub fn bout_loss<T: Scalar>(
    seq: &SkeletonSequence,
    plan: &MaskPlan,
    params: &ModelParams<T>,
    loss_on: LossOn,
) -> Result<T> {
    bout_pass(seq, plan, params, loss_on, false).map(|(l, _)| l)
}

/// Per-bout loss with the gradient it contributes.
#[derive(Clone, Debug)]
pub struct BoutLoss<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Mean loss over the batch and its exact gradient, laid out like
/// `params.data`.
///
/// Bouts may be processed on `pool`; the per-bout gradients are always summed
/// in batch order, so the result does not depend on scheduling.
pub fn forward_backward<T: Scalar>(
    batch: &[SkeletonSequence],
    plans: &[MaskPlan],
    params: &ModelParams<T>,
    loss_on: LossOn,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() || batch.len() != plans.len() {
        return Err(MsaeError::Config(format!(
            "need a non-empty batch with one plan per bout, got {} bouts and {} plans",
            batch.len(),
            plans.len()
        )));
    }
    let one = |(seq, plan): (&SkeletonSequence, &MaskPlan)| -> Result<BoutLoss<T>> {
        let (loss, grad) = bout_pass(seq, plan, params, loss_on, true)?;
        Ok(BoutLoss { loss, grad: grad.expect("gradient requested") })
    };
    let mut total_loss = T::zero();
    let mut total = vec![T::zero(); params.len()];
    let mut accumulate = |b: BoutLoss<T>| {
        total_loss += b.loss;
        for (a, g) in total.iter_mut().zip(b.grad) {
            *a += g;
        }
    };
    match pool {
        Some(pool) if batch.len() > 1 => {
            let parts: Vec<Result<BoutLoss<T>>> =
                pool.install(|| batch.par_iter().zip(plans.par_iter()).map(one).collect());
            for part in parts {
                accumulate(part?);
            }
        }
        _ => {
            for pair in batch.iter().zip(plans) {
                accumulate(one(pair)?);
            }
        }
    }
    let inv = T::one() / T::of(batch.len() as f64);
    total.iter_mut().for_each(|g| *g *= inv);
    Ok((total_loss * inv, total))
}

/// Decoder output for the full grid, frame-major.
pub fn predict_grid<T: Scalar>(seq: &SkeletonSequence, plan: &MaskPlan, params: &ModelParams<T>) -> Result<Vec<[T; 2]>> {
    let (coords, positions) = gather_visible(seq, plan)?;
    let enc = encoder_fwd(&coords, &positions, params)?;
    let dec = decoder_fwd(&enc.latent, &positions, plan, params)?;
    Ok(dec.out.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Mean encoder token of the unmasked bout. Bouts whose length is not a
/// multiple of `F` are padded by repeating the last frame.
pub fn embed_bout<T: Scalar>(seq: &SkeletonSequence, params: &ModelParams<T>) -> Result<Vec<T>> {
    let cfg = &params.config;
    let padded = seq.pad_to_multiple(cfg.frames_per_slice);
    let plan = MaskPlan::unmasked(padded.frames(), padded.joints(), cfg.frames_per_slice);
    let (coords, positions) = gather_visible(&padded, &plan)?;
    let enc = encoder_fwd(&coords, &positions, params)?;
    Ok(crate::model::layers::row_mean(&enc.latent, cfg.d_enc))
}
