use msae_core::masking::{gather_visible, plan_mask, MaskPlan};
use msae_core::model::{
    conv_channel_attention, decoder_forward, encoder_forward, forward_backward, iffa, sstformer_block, stga,
    stse_encode, LossOn, ModelConfig, ModelParams, Stack, TokenSet,
};
use msae_core::rng::{gaussian, stream};
use msae_core::skeleton::SkeletonSequence;
use proptest::prelude::*;

fn cfg(d: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        joints: 3,
        frames_per_slice: 1,
        d_enc: d,
        d_dec: d,
        n_enc: 1,
        n_dec: 1,
        heads,
        mlp_ratio: 2,
        max_frames: 8,
        iffa_kernel: 3,
    }
}

fn rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[]);
    (0..n * d).map(|_| gaussian(&mut rng)).collect()
}

fn tokens(data: Vec<f64>, d: usize, slices: Vec<usize>) -> TokenSet<f64> {
    let positions = slices.iter().map(|&s| (s, 0)).collect();
    TokenSet::new(data, d, positions, slices).unwrap()
}

fn identity(p: &mut ModelParams<f64>, name: &str, d: usize) {
    let w = p.get_mut(name).unwrap();
    w.fill(0.0);
    for i in 0..d {
        w[i * d + i] = 1.0;
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn singleton_slice_attends_to_itself() {
    let p = ModelParams::<f64>::init(&cfg(4, 2), 1).unwrap();
    let x = rows(1, 4, 1);
    let out = stga(&tokens(x.clone(), 4, vec![0]), &p, Stack::Encoder, 0);
    let (v, _) = p.get("encoder.blocks.0.stga.v").unwrap();
    let (o, _) = p.get("encoder.blocks.0.stga.o").unwrap();
    let vx: Vec<f64> = (0..4).map(|r| (0..4).map(|c| v[r * 4 + c] * x[c]).sum()).collect();
    let want: Vec<f64> = (0..4).map(|r| (0..4).map(|c| o[r * 4 + c] * vx[c]).sum()).collect();
    assert!(close(&out.tokens, &want, 1e-12));
}

#[test]
fn equal_keys_give_uniform_weights() {
    let mut p = ModelParams::<f64>::init(&cfg(4, 1), 2).unwrap();
    p.get_mut("encoder.blocks.0.stga.k").unwrap().fill(0.0);
    identity(&mut p, "encoder.blocks.0.stga.v", 4);
    identity(&mut p, "encoder.blocks.0.stga.o", 4);
    let x = rows(2, 4, 2);
    let out = stga(&tokens(x.clone(), 4, vec![0, 0]), &p, Stack::Encoder, 0);
    let mean: Vec<f64> = (0..4).map(|c| 0.5 * x[c] + 0.5 * x[4 + c]).collect();
    assert!(close(out.row(0), &mean, 1e-15));
    assert!(close(out.row(1), &mean, 1e-15));
}

#[test]
fn attention_weights_sum_to_one() {
    let mut p = ModelParams::<f64>::init(&cfg(4, 2), 3).unwrap();
    identity(&mut p, "encoder.blocks.0.stga.v", 4);
    identity(&mut p, "encoder.blocks.0.stga.o", 4);
    p.get_mut("encoder.blocks.0.stga.q").unwrap().iter_mut().for_each(|v| *v *= 7.0);
    // Constant-one tokens through identity V/O: each output entry is the sum
    // of one head's attention row.
    let out = stga(&tokens(vec![1.0; 24], 4, vec![0, 0, 0, 1, 1, 1]), &p, Stack::Encoder, 0);
    assert!(out.tokens.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn attention_stays_inside_slices() {
    let p = ModelParams::<f64>::init(&cfg(4, 2), 4).unwrap();
    let x = rows(6, 4, 4);
    let slices = vec![0, 0, 0, 1, 1, 1];
    let base = stga(&tokens(x.clone(), 4, slices.clone()), &p, Stack::Encoder, 0);
    let mut zeroed = x.clone();
    zeroed[12..].fill(0.0);
    let other = stga(&tokens(zeroed, 4, slices), &p, Stack::Encoder, 0);
    assert_eq!(&base.tokens[..12], &other.tokens[..12]);
}

#[test]
fn iffa_delta_kernel_adds_the_slice_mean() {
    let c = ModelConfig { iffa_kernel: 3, ..cfg(4, 1) };
    let mut p = ModelParams::<f64>::init(&c, 5).unwrap();
    let dw = p.get_mut("encoder.blocks.0.iffa.depthwise").unwrap();
    dw.fill(0.0);
    for ch in 0..4 {
        dw[ch * 3 + 1] = 1.0;
    }
    identity(&mut p, "encoder.blocks.0.iffa.pointwise", 4);
    let x = rows(3, 4, 5);
    let out = iffa(&tokens(x.clone(), 4, vec![0, 0, 0]), &p, Stack::Encoder, 0);
    for r in 0..3 {
        let want: Vec<f64> = (0..4).map(|ch| x[r * 4 + ch] + (x[ch] + x[4 + ch] + x[8 + ch]) / 3.0).collect();
        assert!(close(out.row(r), &want, 1e-12));
    }
    p.get_mut("encoder.blocks.0.iffa.depthwise").unwrap().fill(0.0);
    let out = iffa(&tokens(x.clone(), 4, vec![0, 0, 1]), &p, Stack::Encoder, 0);
    assert_eq!(out.tokens, x);
}

#[test]
fn zero_gate_halves_tokens() {
    let mut p = ModelParams::<f64>::init(&cfg(8, 2), 6).unwrap();
    p.get_mut("decoder.blocks.0.gate.w1").unwrap().fill(0.0);
    p.get_mut("decoder.blocks.0.gate.w2").unwrap().fill(0.0);
    let x = rows(5, 8, 6);
    let out = conv_channel_attention(&tokens(x.clone(), 8, vec![0; 5]), &p, Stack::Decoder, 0);
    let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    assert_eq!(out.tokens, half);
    let p = ModelParams::<f64>::init(&cfg(8, 2), 7).unwrap();
    let out = conv_channel_attention(&tokens(vec![0.0; 16], 8, vec![0, 0]), &p, Stack::Decoder, 0);
    assert!(out.tokens.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_weight_block_only_halves() {
    let mut p = ModelParams::<f64>::zeros(&cfg(4, 2)).unwrap();
    for ln in ["ln1", "ln2", "ln3"] {
        p.get_mut(&format!("encoder.blocks.0.{ln}.scale")).unwrap().fill(1.0);
    }
    let x = rows(6, 4, 8);
    let out = sstformer_block(&tokens(x.clone(), 4, vec![0, 0, 0, 1, 1, 1]), &p, Stack::Encoder, 0);
    let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    assert!(close(&out.tokens, &half, 1e-15));
}

#[test]
fn encoder_keeps_visible_token_count() {
    let c = ModelConfig::default();
    let p = ModelParams::<f32>::init(&c, 0).unwrap();
    let seq = SkeletonSequence::new("s", 200.0, 24, 19, vec![[0.1, -0.2]; 24 * 19]).unwrap();
    let plan = plan_mask(24, 19, 3, 0.25, 1.0 / 3.0, 3).unwrap();
    let (coords, positions) = gather_visible(&seq, &plan).unwrap();
    let latent = encoder_forward(&coords, &positions, &p).unwrap();
    assert_eq!(latent.len(), 234);
    assert_eq!(latent.width, 64);
}

#[test]
fn depth_zero_encoder_is_stse() {
    let c = ModelConfig { n_enc: 0, ..cfg(4, 2) };
    let p = ModelParams::<f64>::init(&c, 9).unwrap();
    let coords = vec![[0.3, 0.4], [1.0, -1.0], [0.0, 2.0]];
    let positions = vec![(0, 0), (1, 1), (2, 2)];
    let a = encoder_forward(&coords, &positions, &p).unwrap();
    let b = stse_encode(&coords, &positions, &p).unwrap();
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn head_bias_alone_sets_every_output() {
    let c = ModelConfig { frames_per_slice: 2, ..cfg(4, 2) };
    let mut p = ModelParams::<f64>::init(&c, 10).unwrap();
    p.get_mut("decoder.head.weight").unwrap().fill(0.0);
    p.get_mut("decoder.head.bias").unwrap().copy_from_slice(&[0.25, -3.0]);
    let plan = MaskPlan::unmasked(4, 3, 2);
    let seq = SkeletonSequence::new("s", 1.0, 4, 3, vec![[1.0, 1.0]; 12]).unwrap();
    let (coords, positions) = gather_visible(&seq, &plan).unwrap();
    let latent = encoder_forward(&coords, &positions, &p).unwrap();
    let grid = decoder_forward(&latent, &plan, &p).unwrap();
    assert_eq!(grid.len(), 12);
    assert!(grid.iter().all(|&g| g == [0.25, -3.0]));
}

#[test]
fn exact_reconstruction_has_zero_loss_and_bias_gradient() {
    let c = cfg(4, 2);
    let mut p = ModelParams::<f64>::init(&c, 11).unwrap();
    p.get_mut("decoder.head.weight").unwrap().fill(0.0);
    p.get_mut("decoder.head.bias").unwrap().copy_from_slice(&[0.5, -0.5]);
    let seq = SkeletonSequence::new("s", 1.0, 4, 3, vec![[0.5, -0.5]; 12]).unwrap();
    let plan = plan_mask(4, 3, 1, 0.25, 1.0 / 3.0, 1).unwrap();
    let (loss, grad) = forward_backward(&[seq], &[plan], &p, LossOn::Masked, None).unwrap();
    assert_eq!(loss, 0.0);
    let span = p.layout.spec("decoder.head.bias").unwrap().span;
    assert!(grad[span.range()].iter().all(|&g| g == 0.0));
}

#[test]
fn unused_frame_rows_get_no_gradient() {
    let c = cfg(4, 2);
    let p = ModelParams::<f64>::init(&c, 12).unwrap();
    let seq = SkeletonSequence::new("s", 1.0, 4, 3, rows(12, 2, 12).chunks(2).map(|c| [c[0], c[1]]).collect())
        .unwrap();
    let plan = plan_mask(4, 3, 1, 0.25, 1.0 / 3.0, 2).unwrap();
    let (_, grad) = forward_backward(&[seq], &[plan], &p, LossOn::Masked, None).unwrap();
    for name in ["encoder.stse.frame_pos", "decoder.frame_pos"] {
        let span = p.layout.spec(name).unwrap().span;
        let g = &grad[span.range()];
        assert!(g[..16].iter().any(|&v| v != 0.0), "{name}");
        assert!(g[16..].iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn empty_visible_set_is_an_error() {
    let p = ModelParams::<f64>::init(&cfg(4, 2), 13).unwrap();
    assert!(matches!(
        encoder_forward(&[], &[], &p),
        Err(msae_core::MsaeError::EmptyVisible { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn blocks_preserve_shape(n in 1usize..64, seed in 0u64..1000) {
        let p = ModelParams::<f64>::init(&cfg(8, 2), seed).unwrap();
        let slices: Vec<usize> = (0..n).map(|i| i / 5).collect();
        let t = tokens(rows(n, 8, seed), 8, slices.clone());
        let out = sstformer_block(&t, &p, Stack::Decoder, 0);
        prop_assert_eq!(out.len(), n);
        prop_assert_eq!(out.tokens.len(), n * 8);
        prop_assert_eq!(out.slice_of_token, slices);
    }
}
