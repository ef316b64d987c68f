//! Optimization loop: Adam with decoupled weight decay, warmup + cosine
//! schedule, global-norm clipping, JSONL metrics and resumable checkpoints.
//!
//! Batch order and mask plans are pure functions of `(seed, epoch, bout)`,
//! so a run can resume from any checkpoint knowing only its step count.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};
use crate::io::{load_checkpoint, make_batches, read_bouts, save_checkpoint, CheckpointManifest};
use crate::masking::{plan_mask, plan_seed, MaskPlan, DEFAULT_SPATIAL_RATIO, DEFAULT_TEMPORAL_RATIO};
use crate::model::{forward_backward, Layout, LossOn, ModelConfig, ModelParams, Scalar};
use crate::skeleton::{normalize_bout, SkeletonSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Bound on the global gradient norm.
    pub grad_clip: f64,
    pub seed: u64,
    pub r_t: f64,
    pub r_s: f64,
    pub loss_on: LossOn,
    /// Save a numbered checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            total_steps: 2000,
            batch_size: 16,
            grad_clip: 1.0,
            seed: 0,
            r_t: DEFAULT_TEMPORAL_RATIO,
            r_s: DEFAULT_SPATIAL_RATIO,
            loss_on: LossOn::Masked,
            checkpoint_every: 500,
            data_path: PathBuf::from("bouts.jsonl"),
            out_dir: PathBuf::from("run"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MsaeError::Config(m));
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return fail(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps >= 0.0 && self.weight_decay >= 0.0 && self.grad_clip > 0.0) {
            return fail("eps and weight_decay must be >= 0 and grad_clip > 0".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        for (name, r) in [("r_t", self.r_t), ("r_s", self.r_s)] {
            if !(0.0..1.0).contains(&r) {
                return fail(format!("{name} must lie in [0, 1), got {r}"));
            }
        }
        Ok(())
    }
}

/// Everything needed to rebuild a run; stored in every checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// On-disk config file: model and training fields side by side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl From<ConfigFile> for RunConfig {
    fn from(c: ConfigFile) -> Self {
        Self { model: c.model, train: c.train }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.betas[0],
            beta2: c.betas[1],
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }
}

/// One Adam update with bias correction and decoupled weight decay:
/// `p -= lr * (m̂ / (sqrt(v̂) + eps) + weight_decay * p)`.
///
/// A non-finite gradient aborts before anything is modified; `layout`, when
/// given, names the offending tensor.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimizerState<T>,
    lr: f64,
    hp: &AdamParams,
    layout: Option<&Layout>,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        let tensor = layout
            .and_then(|l| l.tensor_at(index))
            .map_or_else(|| format!("param[{index}]"), |s| s.name.clone());
        return Err(MsaeError::NonFiniteGradient { tensor, index });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps, wd) = (T::of(lr), T::of(hp.eps), T::of(hp.weight_decay));
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + (T::one() - b1) * g;
        let v = b2 * state.v[i] + (T::one() - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] = params[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    Ok(())
}

/// Linear warmup from 0 to `lr`, then cosine decay to `lr / 100` at
/// `total_steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let floor = cfg.lr / 100.0;
    if step < cfg.warmup_steps {
        return cfg.lr * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.total_steps {
        return floor;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    floor + 0.5 * (cfg.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MsaeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Normalizes a bout and pads it to whole slices.
pub fn prepare_bout(seq: &SkeletonSequence, frames_per_slice: usize) -> Result<SkeletonSequence> {
    Ok(normalize_bout(seq)?.0.pad_to_multiple(frames_per_slice))
}

pub fn load_dataset(path: &Path, model: &ModelConfig) -> Result<Vec<SkeletonSequence>> {
    let raw = read_bouts(path)?;
    raw.iter()
        .enumerate()
        .map(|(i, seq)| {
            if seq.joints() != model.joints {
                return Err(MsaeError::Shape {
                    line: i + 1,
                    message: format!("bout {} has {} joints, model expects {}", seq.bout_id, seq.joints(), model.joints),
                });
            }
            prepare_bout(seq, model.frames_per_slice)
        })
        .collect()
}

pub fn checkpoint_manifest(run: &RunConfig, params: &ModelParams<f32>, step: u64) -> CheckpointManifest {
    let n = params.len();
    CheckpointManifest::new(
        run.clone(),
        run.train.seed,
        step,
        params.layout.specs.iter().map(|s| (s.name.clone(), s.shape.clone())),
        [("adam.m".to_string(), vec![n]), ("adam.v".to_string(), vec![n])],
    )
}

pub fn write_checkpoint(
    path: &Path,
    run: &RunConfig,
    params: &ModelParams<f32>,
    opt: &OptimizerState<f32>,
) -> Result<()> {
    let manifest = checkpoint_manifest(run, params, opt.step);
    let mut data = Vec::with_capacity(3 * params.len());
    data.extend_from_slice(&params.data);
    data.extend_from_slice(&opt.m);
    data.extend_from_slice(&opt.v);
    save_checkpoint(path, &manifest, &data)
}

/// A model restored from disk.
pub struct LoadedModel {
    pub run: RunConfig,
    pub params: ModelParams<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub step: u64,
}

pub fn read_checkpoint(path: &Path) -> Result<LoadedModel> {
    let (manifest, data) = load_checkpoint(path)?;
    let run = manifest.config.clone();
    let mut params = ModelParams::<f32>::zeros(&run.model)?;
    if manifest.tensors.len() != params.layout.specs.len() {
        return Err(MsaeError::Checkpoint(format!(
            "checkpoint has {} tensors, config implies {}",
            manifest.tensors.len(),
            params.layout.specs.len()
        )));
    }
    let layout = params.layout.clone();
    for (entry, spec) in manifest.tensors.iter().zip(&layout.specs) {
        if entry.name != spec.name || entry.shape != spec.shape {
            return Err(MsaeError::Checkpoint(format!(
                "tensor {} {:?} does not match registry entry {} {:?}",
                entry.name, entry.shape, spec.name, spec.shape
            )));
        }
        params.data[spec.span.range()].copy_from_slice(manifest.view(entry, &data));
    }
    let find = |name: &str| manifest.optimizer_tensors.iter().find(|e| e.name == name);
    let optimizer = match (find("adam.m"), find("adam.v")) {
        (Some(m), Some(v)) if m.numel() == params.len() && v.numel() == params.len() => Some(OptimizerState {
            m: manifest.view(m, &data).to_vec(),
            v: manifest.view(v, &data).to_vec(),
            step: manifest.step,
        }),
        _ => None,
    };
    Ok(LoadedModel { run, params, optimizer, step: manifest.step })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Worker threads for batch-parallel passes; 0 or 1 runs single-threaded.
    pub threads: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub start_step: u64,
    pub final_step: u64,
    pub last_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    /// Losses logged by this invocation.
    pub losses: Vec<f64>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.msae";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("step_{step:08}.msae"))
}

/// Keeps only metrics lines for steps before `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = read_metrics(path)?
        .into_iter()
        .filter(|r| r.step < step)
        .map(|r| serde_json::to_string(&r).expect("metrics serialize"))
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    for line in kept {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Mask plans for a batch in a given epoch.
pub fn batch_plans(batch: &[SkeletonSequence], run: &RunConfig, epoch: u64) -> Result<Vec<MaskPlan>> {
    batch
        .iter()
        .map(|seq| {
            plan_mask(
                seq.frames(),
                seq.joints(),
                run.model.frames_per_slice,
                run.train.r_t,
                run.train.r_s,
                plan_seed(run.train.seed, &seq.bout_id, epoch),
            )
        })
        .collect()
}

pub fn train(run: &RunConfig, options: &TrainOptions) -> Result<TrainSummary> {
    run.model.validate()?;
    run.train.validate()?;
    let cfg = &run.train;
    let data = load_dataset(&cfg.data_path, &run.model)?;
    if data.is_empty() {
        return Err(MsaeError::Config(format!("dataset {} is empty", cfg.data_path.display())));
    }

    let (mut params, mut opt) = match &options.resume {
        Some(path) => {
            let loaded = read_checkpoint(path)?;
            if loaded.run.model != run.model {
                return Err(MsaeError::Config("resume checkpoint was trained with a different model config".into()));
            }
            let opt = loaded
                .optimizer
                .ok_or_else(|| MsaeError::Checkpoint("checkpoint has no optimizer state".into()))?;
            (loaded.params, opt)
        }
        None => {
            let p = ModelParams::<f32>::init(&run.model, cfg.seed)?;
            let n = p.len();
            (p, OptimizerState::new(n))
        }
    };
    let start_step = opt.step;
    let hp = AdamParams::from(cfg);

    fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    if options.resume.is_some() {
        truncate_metrics(&metrics_path, start_step)?;
    } else {
        File::create(&metrics_path)?;
    }
    let mut metrics = BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?);

    let pool = if options.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(options.threads)
                .build()
                .map_err(|e| MsaeError::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let batches_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let mut schedule: Option<(u64, Vec<Vec<usize>>)> = None;
    let mut losses = Vec::new();
    for step in start_step..cfg.total_steps {
        let started = Instant::now();
        let at = |e: MsaeError| MsaeError::AtStep { step, source: Box::new(e) };
        let epoch = step / batches_per_epoch;
        if schedule.as_ref().map(|s| s.0) != Some(epoch) {
            schedule = Some((epoch, make_batches(data.len(), cfg.batch_size, cfg.seed, epoch)));
        }
        let idx = &schedule.as_ref().unwrap().1[(step % batches_per_epoch) as usize];
        let batch: Vec<SkeletonSequence> = idx.iter().map(|&i| data[i].clone()).collect();
        let plans = batch_plans(&batch, run, epoch).map_err(at)?;

        let (loss, mut grads) = forward_backward(&batch, &plans, &params, cfg.loss_on, pool.as_ref()).map_err(at)?;
        if !loss.is_finite() {
            let culprit = params
                .first_non_finite()
                .map(|p| format!("first non-finite parameter: {p}"))
                .or_else(|| {
                    let i = grads.iter().position(|g| !g.is_finite())?;
                    params.layout.tensor_at(i).map(|s| format!("first non-finite gradient: {}", s.name))
                })
                .unwrap_or_else(|| "parameters and gradients are finite; activations overflowed".into());
            return Err(at(MsaeError::NonFiniteLoss(culprit)));
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        let lr = lr_at(step + 1, cfg);
        adam_step(&mut params.data, &grads, &mut opt, lr, &hp, Some(&params.layout)).map_err(at)?;

        let record = MetricsRecord {
            step,
            loss: loss as f64,
            lr,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        writeln!(metrics, "{}", serde_json::to_string(&record).expect("metrics serialize"))?;
        losses.push(record.loss);
        if step % 100 == 0 {
            log::info!("step {step} loss {:.6} lr {lr:.3e}", record.loss);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            metrics.flush()?;
            write_checkpoint(&checkpoint_path(&cfg.out_dir, step + 1), run, &params, &opt)?;
        }
    }
    metrics.flush()?;
    let last = cfg.out_dir.join(LAST_CHECKPOINT);
    write_checkpoint(&last, run, &params, &opt)?;
    Ok(TrainSummary {
        start_step,
        final_step: opt.step,
        last_checkpoint: last,
        metrics_path,
        losses,
    })
}
