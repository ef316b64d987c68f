use std::fs;
use std::path::Path;

use msae_core::datagen::{generate_bout, SynthParams};
use msae_core::io::write_bouts;
use msae_core::model::ModelConfig;
use msae_core::training::{
    clip_grad_norm, read_checkpoint, read_metrics, train, MetricsRecord, RunConfig, TrainConfig, TrainOptions,
};
use msae_core::MsaeError;
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    ModelConfig {
        joints: 6,
        frames_per_slice: 3,
        d_enc: 8,
        d_dec: 8,
        n_enc: 2,
        n_dec: 1,
        heads: 2,
        mlp_ratio: 2,
        max_frames: 16,
        iffa_kernel: 3,
    }
}

fn setup(dir: &Path, n: u64) -> RunConfig {
    let bouts: Vec<_> = (0..n)
        .map(|s| generate_bout(&SynthParams { joints: 6, frames: 12, seed: s, ..SynthParams::default() }).unwrap())
        .collect();
    let data = dir.join("bouts.jsonl");
    write_bouts(&data, &bouts).unwrap();
    RunConfig {
        model: small_model(),
        train: TrainConfig {
            total_steps: 30,
            warmup_steps: 5,
            batch_size: 2,
            checkpoint_every: 10,
            lr: 3e-3,
            data_path: data,
            out_dir: dir.join("run"),
            ..TrainConfig::default()
        },
    }
}

fn without_wall(m: Vec<MetricsRecord>) -> Vec<(u64, u64, u64)> {
    m.into_iter().map(|r| (r.step, r.loss.to_bits(), r.lr.to_bits())).collect()
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = setup(dir.path(), 5);
    let a = train(&run, &TrainOptions::default()).unwrap();
    let log_a = read_metrics(&a.metrics_path).unwrap();
    let ckpt_a = fs::read(&a.last_checkpoint).unwrap();
    let b = train(&run, &TrainOptions::default()).unwrap();
    assert_eq!(without_wall(log_a.clone()), without_wall(read_metrics(&b.metrics_path).unwrap()));
    assert_eq!(ckpt_a, fs::read(&b.last_checkpoint).unwrap());
    assert_eq!(log_a.len(), 30);
    assert!(log_a.iter().all(|r| r.loss.is_finite() && r.wall_ms >= 0.0));
}

#[test]
fn threads_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = setup(dir.path(), 5);
    let a = train(&run, &TrainOptions::default()).unwrap();
    let bytes = fs::read(&a.last_checkpoint).unwrap();
    let b = train(&run, &TrainOptions { threads: 3, ..TrainOptions::default() }).unwrap();
    assert_eq!(bytes, fs::read(&b.last_checkpoint).unwrap());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = setup(dir.path(), 5);
    let full = train(&run, &TrainOptions::default()).unwrap();
    let full_log = without_wall(read_metrics(&full.metrics_path).unwrap());
    let full_ckpt = fs::read(&full.last_checkpoint).unwrap();

    let mid = dir.path().join("mid.msae");
    fs::copy(run.train.out_dir.join("step_00000010.msae"), &mid).unwrap();
    // Leave a stale tail in the log; resuming must drop it.
    let resumed = train(&run, &TrainOptions { resume: Some(mid), ..TrainOptions::default() }).unwrap();
    assert_eq!(resumed.start_step, 10);
    assert_eq!(resumed.losses.len(), 20);
    assert_eq!(without_wall(read_metrics(&resumed.metrics_path).unwrap()), full_log);
    assert_eq!(fs::read(&resumed.last_checkpoint).unwrap(), full_ckpt);
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = setup(dir.path(), 2);
    run.train.total_steps = 0;
    let s = train(&run, &TrainOptions::default()).unwrap();
    assert!(read_metrics(&s.metrics_path).unwrap().is_empty());
    let loaded = read_checkpoint(&s.last_checkpoint).unwrap();
    assert_eq!(loaded.step, 0);
    assert_eq!(loaded.run, run);
    let fresh = msae_core::ModelParams::<f32>::init(&run.model, run.train.seed).unwrap();
    assert_eq!(loaded.params.data, fresh.data);
}

#[test]
fn missing_and_empty_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = setup(dir.path(), 1);
    run.train.data_path = dir.path().join("absent.jsonl");
    assert!(matches!(train(&run, &TrainOptions::default()), Err(MsaeError::Io(_))));
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    run.train.data_path = empty;
    assert!(matches!(train(&run, &TrainOptions::default()), Err(MsaeError::Config(_))));
}

#[test]
fn joint_count_mismatch_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = setup(dir.path(), 2);
    run.model.joints = 7;
    assert!(matches!(train(&run, &TrainOptions::default()), Err(MsaeError::Shape { line: 1, .. })));
}

#[test]
fn diverging_run_reports_step_and_cause() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = setup(dir.path(), 2);
    run.train.lr = 1e30;
    run.train.warmup_steps = 0;
    run.train.grad_clip = 1e30;
    match train(&run, &TrainOptions::default()) {
        Err(MsaeError::AtStep { source, .. }) => assert!(matches!(
            *source,
            MsaeError::NonFiniteLoss(_) | MsaeError::NonFiniteGradient { .. }
        )),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn clipped_norm_is_bounded(g in prop::collection::vec(-1e3f32..1e3, 1..200), bound in 1e-3f64..10.0) {
        let mut g = g;
        clip_grad_norm(&mut g, bound);
        let norm = g.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!(norm <= bound + 1e-6);
    }
}
