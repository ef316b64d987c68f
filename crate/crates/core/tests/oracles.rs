//! Model sub-modules against the scalar references.

use msae_core::masking::{gather_visible, plan_mask};
use msae_core::model::{
    bout_loss, conv_channel_attention, decoder_forward, embed_bout, encoder_forward, iffa, masked_mse, predict_grid,
    sstformer_block, stga, stse_encode, LossOn, ModelConfig, ModelParams, Stack, TokenSet,
};
use msae_core::oracle::*;
use msae_core::rng::{gaussian, stream};
use msae_core::skeleton::SkeletonSequence;
use msae_core::training::{adam_step, AdamParams, OptimizerState};

fn small_config() -> ModelConfig {
    ModelConfig {
        joints: 3,
        frames_per_slice: 3,
        d_enc: 4,
        d_dec: 4,
        n_enc: 2,
        n_dec: 2,
        heads: 2,
        mlp_ratio: 2,
        max_frames: 12,
        iffa_kernel: 3,
    }
}

/// Initialized params with every entry perturbed, so no tensor sits at a
/// special value (unit LN scale, zero biases).
fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(cfg, seed).unwrap();
    let mut rng = stream(seed, &[99]);
    for v in p.data.iter_mut() {
        *v += 0.3 * gaussian(&mut rng);
    }
    p
}

fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[7]);
    (0..n).map(|_| (0..d).map(|_| gaussian(&mut rng)).collect()).collect()
}

fn tokens_of(rows: &[Vec<f64>], slices: Vec<usize>) -> TokenSet<f64> {
    let d = rows[0].len();
    let positions = slices.iter().enumerate().map(|(i, &s)| (s, i % 3)).collect();
    TokenSet::new(rows.concat(), d, positions, slices).unwrap()
}

fn max_diff(a: &TokenSet<f64>, b: &[Vec<f64>]) -> f64 {
    a.tokens.iter().zip(b.concat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_bout(frames: usize, joints: usize, seed: u64) -> SkeletonSequence {
    let mut rng = stream(seed, &[3]);
    let coords = (0..frames * joints).map(|_| [gaussian(&mut rng), gaussian(&mut rng)]).collect();
    SkeletonSequence::new(format!("r{seed}"), 30.0, frames, joints, coords).unwrap()
}

#[test]
fn stse_matches_reference() {
    let cfg = small_config();
    let p = random_params(&cfg, 1);
    let positions = vec![(0, 0), (1, 2), (2, 1), (4, 0), (5, 1), (7, 2)];
    let coords: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 0.3 - 1.0, 0.5 - i as f64 * 0.1]).collect();
    let t = stse_encode(&coords, &positions, &p).unwrap();
    assert!(max_diff(&t, &stse_reference(&coords, &positions, &p)) < 1e-12);
    assert_eq!(t.slice_of_token, vec![0, 0, 0, 1, 1, 1]);
}

#[test]
fn stga_matches_reference() {
    let cfg = small_config();
    let p = random_params(&cfg, 2);
    let rows = random_rows(6, 4, 2);
    let slices = vec![0, 0, 0, 1, 1, 1];
    for stack in [Stack::Encoder, Stack::Decoder] {
        let prefix = if stack == Stack::Encoder { "encoder.blocks.1" } else { "decoder.blocks.0" };
        let layer = if stack == Stack::Encoder { 1 } else { 0 };
        let got = stga(&tokens_of(&rows, slices.clone()), &p, stack, layer);
        assert!(max_diff(&got, &stga_reference(&rows, &slices, &p, prefix)) < 1e-10);
    }
}

#[test]
fn iffa_matches_reference_over_four_slices() {
    let cfg = small_config();
    let p = random_params(&cfg, 3);
    let rows = random_rows(10, 4, 3);
    let slices = vec![0, 0, 1, 1, 1, 2, 3, 3, 3, 3];
    let got = iffa(&tokens_of(&rows, slices.clone()), &p, Stack::Encoder, 0);
    assert!(max_diff(&got, &iffa_reference(&rows, &slices, &p, "encoder.blocks.0")) < 1e-10);
}

#[test]
fn gate_matches_reference() {
    let cfg = small_config();
    let p = random_params(&cfg, 4);
    let rows = random_rows(7, 4, 4);
    let got = conv_channel_attention(&tokens_of(&rows, vec![0; 7]), &p, Stack::Decoder, 1);
    assert!(max_diff(&got, &gate_reference(&rows, &p, "decoder.blocks.1")) < 1e-10);
}

#[test]
fn block_matches_composed_reference() {
    let cfg = small_config();
    let p = random_params(&cfg, 5);
    let rows = random_rows(9, 4, 5);
    let slices = vec![0, 0, 0, 0, 1, 1, 2, 2, 2];
    let got = sstformer_block(&tokens_of(&rows, slices.clone()), &p, Stack::Encoder, 1);
    assert!(max_diff(&got, &block_reference(&rows, &slices, &p, "encoder.blocks.1")) < 1e-9);
}

#[test]
fn encoder_and_decoder_match_reference() {
    let cfg = small_config();
    let p = random_params(&cfg, 6);
    let seq = random_bout(6, 3, 6);
    let plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 11).unwrap();
    let (coords, positions) = gather_visible(&seq, &plan).unwrap();
    assert_eq!(positions, visible_reference(&plan));
    let latent = encoder_forward(&coords, &positions, &p).unwrap();
    let want = encoder_reference(&coords, &positions, &p);
    assert!(max_diff(&latent, &want) < 1e-9);
    let grid = decoder_forward(&latent, &plan, &p).unwrap();
    let want = decoder_reference(&want, &positions, &plan, &p);
    let err = grid.iter().flatten().zip(want.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn tiny_pipeline_loss_matches_reference() {
    let cfg = small_config();
    for seed in 0..4 {
        let p = random_params(&cfg, 20 + seed);
        let seq = random_bout(6, 3, seed);
        let plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, seed).unwrap();
        for loss_on in [LossOn::Masked, LossOn::All] {
            let model = bout_loss(&seq, &plan, &p, loss_on).unwrap();
            let reference = pipeline_reference(&seq, &plan, &p, loss_on).unwrap();
            assert!((model - reference).abs() < 1e-9, "seed {seed}: {model} vs {reference}");
        }
    }
}

#[test]
fn zero_model_loss_is_mean_squared_target() {
    let cfg = small_config();
    let p = ModelParams::<f64>::zeros(&cfg).unwrap();
    let seq = random_bout(6, 3, 9);
    let plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 9).unwrap();
    let ind = plan.indicator();
    let mut sum = 0.0;
    let mut n = 0;
    for (i, pt) in seq.coords().iter().enumerate() {
        if ind[i] {
            sum += pt[0] * pt[0] + pt[1] * pt[1];
            n += 2;
        }
    }
    let reference = pipeline_reference(&seq, &plan, &p, LossOn::Masked).unwrap();
    assert!((reference - sum / n as f64).abs() < 1e-12);
    assert!((bout_loss(&seq, &plan, &p, LossOn::Masked).unwrap() - reference).abs() < 1e-12);
    assert_eq!(reference, pipeline_reference(&seq, &plan, &p, LossOn::Masked).unwrap());
}

#[test]
fn masked_mse_matches_double_loop() {
    let rows = random_rows(3, 4, 12);
    let pred: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1]]).collect();
    let target: Vec<[f64; 2]> = rows.iter().map(|r| [r[2], r[3]]).collect();
    let ind = [true, false, true];
    let got = masked_mse(&pred, &target, &ind, LossOn::Masked).unwrap();
    let want = masked_mse_reference(&pred, &target, &ind, LossOn::Masked);
    assert!((got - want).abs() <= f64::EPSILON * want.abs());
}

#[test]
fn adam_matches_reference() {
    let n = 100;
    let mut p: Vec<f64> = random_rows(1, n, 30).concat();
    let mut p_ref = p.clone();
    let mut state = OptimizerState::new(n);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let hp = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
    for t in 1..=5u64 {
        let g = random_rows(1, n, 40 + t).concat();
        adam_step(&mut p, &g, &mut state, 1e-3, &hp, None).unwrap();
        let h = AdamReference { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
        adam_reference(&mut p_ref, &g, &mut m, &mut v, t, h);
    }
    for (a, b) in p.iter().zip(&p_ref) {
        assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0));
    }
}

#[test]
fn embedding_is_the_mean_latent_token() {
    let cfg = small_config();
    let p = random_params(&cfg, 13);
    let seq = random_bout(6, 3, 13);
    let e = embed_bout(&seq, &p).unwrap();
    let positions: Vec<(usize, usize)> = (0..6).flat_map(|f| (0..3).map(move |j| (f, j))).collect();
    let latent = encoder_reference(seq.coords(), &positions, &p);
    for c in 0..4 {
        let mean = latent.iter().map(|r| r[c]).sum::<f64>() / latent.len() as f64;
        assert!((e[c] - mean).abs() < 1e-9);
    }
    assert_eq!(e, embed_bout(&seq, &p).unwrap());
    let zero = ModelParams::<f64>::zeros(&cfg).unwrap();
    assert!(embed_bout(&seq, &zero).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn prediction_is_deterministic_and_full_grid() {
    let cfg = small_config();
    let p = random_params(&cfg, 14);
    let seq = random_bout(6, 3, 14);
    let plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 14).unwrap();
    let a = predict_grid(&seq, &plan, &p).unwrap();
    assert_eq!(a.len(), 18);
    assert_eq!(a, predict_grid(&seq, &plan, &p).unwrap());
}
