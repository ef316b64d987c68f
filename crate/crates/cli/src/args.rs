//! Command-line surface. Model and training flags carry the exact field
//! names used in config files and checkpoint manifests.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msae_core::{LossOn, ModelConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "msae", version, about = "Masked skeleton-sequence autoencoder toolkit")]
pub struct Cli {
    /// Worker threads; 1 keeps every result bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic bouts as JSON lines.
    Gen(GenArgs),
    /// Train from a bout file.
    Train(TrainArgs),
    /// Mask one bout, reconstruct it and optionally render the result.
    Reconstruct(ReconstructArgs),
    /// Export one embedding row per bout.
    Embed(EmbedArgs),
    /// Mean masked reconstruction error over several mask seeds.
    Eval(EvalArgs),
    /// Check a bout file's shape, finiteness and joint count.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long = "T", default_value_t = 24)]
    pub frames: usize,
    #[arg(long = "J", default_value_t = 19)]
    pub joints: usize,
    #[arg(long, default_value_t = 200.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "tail_freq", default_value_t = 25.0)]
    pub tail_freq: f64,
    #[arg(long, default_value_t = 0.2)]
    pub amp: f64,
    #[arg(long = "wave_number", default_value_t = 0.5)]
    pub wave_number: f64,
    #[arg(long = "heading_drift", default_value_t = 0.01)]
    pub heading_drift: f64,
    #[arg(long = "noise_sigma", default_value_t = 0.002)]
    pub noise_sigma: f64,
    /// Relative per-bout spread of amplitude, frequency and drift.
    #[arg(long, default_value_t = 0.25)]
    pub jitter: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// The full-width architecture.
    Default,
    /// Full depth, narrow width; trains on one core.
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossOnArg {
    Masked,
    All,
}

impl From<LossOnArg> for LossOn {
    fn from(v: LossOnArg) -> Self {
        match v {
            LossOnArg::Masked => LossOn::Masked,
            LossOnArg::All => LossOn::All,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    #[arg(long = "J")]
    pub joints: Option<usize>,
    #[arg(long = "F")]
    pub frames_per_slice: Option<usize>,
    #[arg(long = "d_enc")]
    pub d_enc: Option<usize>,
    #[arg(long = "d_dec")]
    pub d_dec: Option<usize>,
    #[arg(long = "n_enc")]
    pub n_enc: Option<usize>,
    #[arg(long = "n_dec")]
    pub n_dec: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long = "mlp_ratio")]
    pub mlp_ratio: Option<usize>,
    #[arg(long = "max_T")]
    pub max_frames: Option<usize>,
    #[arg(long = "iffa_kernel")]
    pub iffa_kernel: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["B1", "B2"])]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long = "weight_decay")]
    pub weight_decay: Option<f64>,
    #[arg(long = "warmup_steps")]
    pub warmup_steps: Option<u64>,
    #[arg(long = "total_steps")]
    pub total_steps: Option<u64>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long = "grad_clip")]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "r_t")]
    pub r_t: Option<f64>,
    #[arg(long = "r_s")]
    pub r_s: Option<f64>,
    #[arg(long = "loss_on", value_enum)]
    pub loss_on: Option<LossOnArg>,
    #[arg(long = "checkpoint_every")]
    pub checkpoint_every: Option<u64>,
    #[arg(long = "data_path", alias = "data")]
    pub data_path: Option<PathBuf>,
    #[arg(long = "out_dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with model and training fields side by side.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint; its config is the base unless --config is given.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Starting point for model fields before --config and flags apply.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Bout to reconstruct; defaults to the first one in the file.
    #[arg(long = "bout-id")]
    pub bout_id: Option<String>,
    /// Defaults to the ratio the checkpoint was trained with.
    #[arg(long = "r_t")]
    pub r_t: Option<f64>,
    #[arg(long = "r_s")]
    pub r_s: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this mask plan (JSON) instead of sampling one.
    #[arg(long, conflicts_with_all = ["r_t", "r_s"])]
    pub plan: Option<PathBuf>,
    /// Reconstructed bout as one JSON line; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "dump-plan")]
    pub dump_plan: Option<PathBuf>,
    #[arg(long)]
    pub render: Option<PathBuf>,
    #[arg(long = "frames-per-row", default_value_t = 6)]
    pub frames_per_row: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "r_t")]
    pub r_t: Option<f64>,
    #[arg(long = "r_s")]
    pub r_s: Option<f64>,
    /// Mask plans drawn per bout.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Base seed for the mask plans.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "expect-joints")]
    pub expect_joints: Option<usize>,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Default => ModelConfig::default(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl TrainArgs {
    /// Applies explicitly given flags on top of `run`.
    pub fn overlay(&self, run: &mut RunConfig) {
        overlay!(
            run.model, self.model, joints, frames_per_slice, d_enc, d_dec, n_enc, n_dec, heads, mlp_ratio,
            max_frames, iffa_kernel
        );
        overlay!(
            run.train, self.train, lr, eps, weight_decay, warmup_steps, total_steps, batch_size, grad_clip, seed,
            r_t, r_s, checkpoint_every, data_path, out_dir
        );
        if let Some(b) = &self.train.betas {
            run.train.betas = [b[0], b[1]];
        }
        if let Some(l) = self.train.loss_on {
            run.train.loss_on = l.into();
        }
    }
}
