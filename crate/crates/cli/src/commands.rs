use std::fs;
use std::io::Write;
use std::path::Path;

use msae_core::io::{bout_to_json, read_bouts, validate_bouts, write_bouts, write_embeddings};
use msae_core::masking::{plan_mask, scatter_restore, MaskPlan};
use msae_core::model::{bout_loss, embed_bout, predict_grid, LossOn, ModelParams};
use msae_core::rng::{derive_seed, hash_str};
use msae_core::skeleton::{denormalize_points, normalize_bout};
use msae_core::training::{prepare_bout, read_checkpoint, train, ConfigFile, LoadedModel, RunConfig, TrainOptions};
use msae_core::{generate_dataset, MsaeError, SkeletonSequence, SynthParams};
use serde::Serialize;

use crate::args::{EmbedArgs, EvalArgs, GenArgs, ReconstructArgs, TrainArgs, ValidateArgs};
use crate::render::{render_svg, RenderSpec};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

pub fn exit_code(e: &MsaeError) -> u8 {
    match e.root() {
        MsaeError::Config(_) | MsaeError::EmptyLossSupport => EXIT_USAGE,
        MsaeError::NonFiniteGradient { .. } | MsaeError::NonFiniteLoss(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

impl From<MsaeError> for CliError {
    fn from(e: MsaeError) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        MsaeError::from(e).into()
    }
}

pub type CmdResult = Result<(), CliError>;

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    require_file(path, "checkpoint")?;
    Ok(read_checkpoint(path)?)
}

fn load_bouts(path: &Path, joints: usize) -> Result<Vec<SkeletonSequence>, CliError> {
    require_file(path, "data file")?;
    let bouts = read_bouts(path)?;
    if let Some(b) = bouts.iter().find(|b| b.joints() != joints) {
        return Err(CliError::data(format!(
            "bout {} has {} joints but the model expects {joints}",
            b.bout_id,
            b.joints()
        )));
    }
    Ok(bouts)
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn gen(a: &GenArgs) -> CmdResult {
    let base = SynthParams {
        joints: a.joints,
        frames: a.frames,
        fps: a.fps,
        tail_freq: a.tail_freq,
        amp: a.amp,
        wave_number: a.wave_number,
        heading_drift: a.heading_drift,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    let bouts = generate_dataset(&base, a.n, a.jitter)?;
    write_bouts(&a.out, &bouts)?;
    eprintln!("wrote {} bouts to {}", bouts.len(), a.out.display());
    Ok(())
}

/// Resolves the effective run config: config file, else the resumed
/// checkpoint's, else defaults; then preset, then individual flags.
pub fn resolve_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut run = if let Some(path) = &a.config {
        require_file(path, "config file")?;
        let text = fs::read_to_string(path)?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        file.into()
    } else if let Some(ckpt) = &a.resume {
        load_model(ckpt)?.run
    } else {
        RunConfig::default()
    };
    if let Some(p) = a.preset {
        run.model = p.config();
    }
    a.overlay(&mut run);
    Ok(run)
}

pub fn train_cmd(a: &TrainArgs, threads: usize) -> CmdResult {
    let run = resolve_config(a)?;
    run.model.validate()?;
    run.train.validate()?;
    require_file(&run.train.data_path, "data file")?;
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }
    let summary = train(&run, &TrainOptions { resume: a.resume.clone(), threads })?;
    let file = ConfigFile { model: run.model.clone(), train: run.train.clone() };
    fs::write(
        run.train.out_dir.join("config.json"),
        serde_json::to_string_pretty(&file).expect("config serializes"),
    )?;
    match (summary.losses.first(), summary.losses.last()) {
        (Some(first), Some(last)) => eprintln!(
            "steps {}..{}: loss {first:.6} -> {last:.6}",
            summary.start_step, summary.final_step
        ),
        _ => eprintln!("no steps to run (step {})", summary.final_step),
    }
    eprintln!("checkpoint {}", summary.last_checkpoint.display());
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs) -> CmdResult {
    let model = load_model(&a.ckpt)?;
    let cfg = &model.run.model;
    let bouts = load_bouts(&a.data, cfg.joints)?;
    let seq = match &a.bout_id {
        Some(id) => bouts
            .into_iter()
            .find(|b| &b.bout_id == id)
            .ok_or_else(|| CliError::usage(format!("no bout with id {id} in {}", a.data.display())))?,
        None => bouts
            .into_iter()
            .next()
            .ok_or_else(|| CliError::usage(format!("{} contains no bouts", a.data.display())))?,
    };
    let (normalized, record) = normalize_bout(&seq)?;
    let padded = normalized.pad_to_multiple(cfg.frames_per_slice);
    let plan = match &a.plan {
        Some(path) => {
            require_file(path, "plan file")?;
            let plan: MaskPlan = serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| CliError::usage(format!("plan {}: {e}", path.display())))?;
            plan.check_shape(padded.frames(), padded.joints())?;
            plan
        }
        None => plan_mask(
            padded.frames(),
            padded.joints(),
            cfg.frames_per_slice,
            a.r_t.unwrap_or(model.run.train.r_t),
            a.r_s.unwrap_or(model.run.train.r_s),
            a.seed,
        )?,
    };
    let params: ModelParams<f64> = model.params.cast();
    let predicted = denormalize_points(&predict_grid(&padded, &plan, &params)?, &record);
    let original = seq.pad_to_multiple(cfg.frames_per_slice);
    let restored = scatter_restore(&predicted, &original, &plan)?.truncate(seq.frames());

    emit(a.out.as_deref(), &format!("{}\n", bout_to_json(&restored)))?;
    if let Some(path) = &a.dump_plan {
        fs::write(path, serde_json::to_string_pretty(&plan).expect("plan serializes"))?;
    }
    let n = seq.frames() * seq.joints();
    let hidden = &plan.indicator()[..n];
    if let Some(path) = &a.render {
        let spec = RenderSpec { frames_per_row: a.frames_per_row, ..RenderSpec::default() };
        fs::write(path, render_svg(&seq, &predicted[..n], hidden, &spec))?;
    }
    eprintln!("bout {}: {} of {n} positions masked", seq.bout_id, hidden.iter().filter(|&&h| h).count());
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> CmdResult {
    let model = load_model(&a.ckpt)?;
    let bouts = load_bouts(&a.data, model.run.model.joints)?;
    let params: ModelParams<f64> = model.params.cast();
    let rows = bouts
        .iter()
        .map(|b| Ok((b.bout_id.clone(), embed_bout(&normalize_bout(b)?.0, &params)?)))
        .collect::<Result<Vec<_>, MsaeError>>()?;
    write_embeddings(&a.out, &rows)?;
    eprintln!("wrote {} embeddings of width {}", rows.len(), model.run.model.d_enc);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BoutScore {
    pub bout_id: String,
    pub mean_masked_mse: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub mean_masked_mse: f64,
    pub per_bout: Vec<BoutScore>,
    pub seeds: u64,
    pub r_t: f64,
    pub r_s: f64,
    pub checkpoint_step: u64,
}

/// Plan seed for evaluation round `round` of a bout.
pub fn eval_plan_seed(base: u64, bout_id: &str, round: u64) -> u64 {
    derive_seed(base, &[hash_str("eval"), hash_str(bout_id), round])
}

/// Scores are masked MSE in the normalized frame the model trains in.
pub fn evaluate(a: &EvalArgs) -> Result<EvalReport, CliError> {
    let model = load_model(&a.ckpt)?;
    let cfg = &model.run.model;
    let bouts = load_bouts(&a.data, cfg.joints)?;
    if bouts.is_empty() {
        return Err(CliError::usage(format!("{} contains no bouts", a.data.display())));
    }
    if a.seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let (r_t, r_s) = (a.r_t.unwrap_or(model.run.train.r_t), a.r_s.unwrap_or(model.run.train.r_s));
    let params: ModelParams<f64> = model.params.cast();
    let mut per_bout = Vec::with_capacity(bouts.len());
    for b in &bouts {
        let seq = prepare_bout(b, cfg.frames_per_slice)?;
        let per_seed = (0..a.seeds)
            .map(|round| {
                let seed = eval_plan_seed(a.seed, &b.bout_id, round);
                let plan = plan_mask(seq.frames(), seq.joints(), cfg.frames_per_slice, r_t, r_s, seed)?;
                bout_loss(&seq, &plan, &params, LossOn::Masked)
            })
            .collect::<Result<Vec<f64>, MsaeError>>()?;
        if let Some(bad) = per_seed.iter().find(|l| !l.is_finite()) {
            return Err(MsaeError::NonFiniteLoss(format!("bout {} scored {bad}", b.bout_id)).into());
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        per_bout.push(BoutScore { bout_id: b.bout_id.clone(), mean_masked_mse: mean, per_seed });
    }
    let mean = per_bout.iter().map(|s| s.mean_masked_mse).sum::<f64>() / per_bout.len() as f64;
    Ok(EvalReport {
        mean_masked_mse: mean,
        per_bout,
        seeds: a.seeds,
        r_t,
        r_s,
        checkpoint_step: model.step,
    })
}

pub fn eval_cmd(a: &EvalArgs) -> CmdResult {
    let report = evaluate(a)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    emit(a.out.as_deref(), &format!("{text}\n"))
}

pub fn validate(a: &ValidateArgs) -> CmdResult {
    require_file(&a.data, "data file")?;
    let report = validate_bouts(&a.data, a.expect_joints)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.is_valid() {
        Ok(())
    } else {
        let lines: Vec<String> = report.issues.iter().map(|i| i.line.to_string()).collect();
        Err(CliError::data(format!("invalid bouts on lines {}", lines.join(", "))))
    }
}
