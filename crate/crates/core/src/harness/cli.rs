//! `velab` command-line front end.
//!
//! Every subcommand works inside one output directory (`--out`, or the
//! `VELAB_OUT` environment variable). Layout:
//!
//! ```text
//! mixture.txt  mixture.svg  validity.json  manifest.json
//! tokenizer/   checkpoint.bin  metrics.jsonl  config.toml  manifest.json
//! flow/        checkpoint.bin  metrics.jsonl  config.toml  manifest.json
//! samples/     samples.txt  latents.txt  samples.svg  manifest.json
//! analysis/    report.json  sensitivity.txt  sensitivity.svg  latent.svg  manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use super::artifacts::{
    self, colored_scatter_svg, emit, heatmap_svg, scatter_svg, DirLock, JsonlWriter, Layer,
    Manifest,
};
use super::config::{sha256_hex, LatentSetting, Profile, StageConfig, TrainingConfig};
use super::experiments::{self, TokenizerSummary};
use crate::analysis::{
    self, equilibrium_check, generation_report, latent_grid, log_log_slope, robustness_probe,
    sensitivity_field, taylor_slope_check, EquilibriumConfig, EquilibriumMode, TaylorConfig,
    ValidityOracle, VALIDITY_PERCENTILE, VALIDITY_SAMPLES,
};
use crate::checkpoint::Checkpoint;
use crate::decoder::{IdentityDecoder, LatentDecoder, LinearDecoder};
use crate::error::{Error, Result};
use crate::flow::{self, FlowNetwork, FlowRecord, FlowTrainer, LatentSource};
use crate::matrix::Matrix;
use crate::mixture::MixtureModel;
use crate::nn::ScheduleMode;
use crate::rng::{streams, RngStream};
use crate::tokenizer::{
    self, LatentBatchStats, LossConfig, LossMode, ReconNorm, RegTarget, TokenizerModel,
    TokenizerTrainer,
};
use crate::train::TrainingSink;

pub const OUT_ENV: &str = "VELAB_OUT";
pub const DEFAULT_OUT: &str = "velab-out";

pub mod layout {
    pub const MIXTURE: &str = "mixture.txt";
    pub const MIXTURE_SVG: &str = "mixture.svg";
    pub const VALIDITY: &str = "validity.json";
    pub const TOKENIZER: &str = "tokenizer";
    pub const FLOW: &str = "flow";
    pub const SAMPLES: &str = "samples";
    pub const ANALYSIS: &str = "analysis";
    pub const CHECKPOINT: &str = "checkpoint.bin";
    pub const METRICS: &str = "metrics.jsonl";
    pub const CONFIG: &str = "config.toml";
    pub const POINTS: &str = "samples.txt";
    pub const LATENTS: &str = "latents.txt";
    pub const POINTS_SVG: &str = "samples.svg";
    pub const REPORT: &str = "report.json";
}

/// Oracle points drawn for preview figures.
const PREVIEW_POINTS: usize = 50_000;
const OVERLAY_POINTS: usize = 20_000;
const FIGURE_WINDOW: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(
    name = "velab",
    version,
    about = "Variance-expansion tokenizer lab on a 2D fractal mixture"
)]
pub struct Cli {
    /// Run seed (default 0, or the value in --config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Network sizes and iteration budget; overrides the stage sizes in --config.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Worker threads for batch evaluation and sampling.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the fractal mixture and a preview scatter.
    BuildData(BuildDataArgs),
    /// Train the tokenizer on mixture samples.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train the flow on tokenizer latents (or raw data).
    TrainFlow(TrainFlowArgs),
    /// Generate points with the Euler sampler and decode them.
    Sample(SampleArgs),
    /// Run sensitivity, equilibrium, robustness and generation probes.
    Analyze(AnalyzeArgs),
    /// Rebuild a figure proxy or table trend from seeds.
    Reproduce(ReproduceArgs),
    /// Print a checkpoint header.
    DescribeCheckpoint(DescribeArgs),
    /// Print the effective configuration.
    ShowConfig(ShowConfigArgs),
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    /// Branching depth of the fractal tree.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Components per branch.
    #[arg(long)]
    pub segs: Option<u32>,
    /// Seed of the tree geometry.
    #[arg(long)]
    pub mixture_seed: Option<u64>,
    /// Overwrite an existing mixture.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Kl,
    Ve,
    FixedVar,
    NegVar,
    LogEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Warmup,
    InverseSqrt,
}

#[derive(Debug, Args, Default)]
pub struct StageArgs {
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub ckpt_every: Option<u64>,
    /// Linear layers per network.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Continue from the checkpoint in the stage directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop (with a checkpoint) after this iteration.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Start over even if a checkpoint exists.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fixed encoder standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_log: Option<f64>,
    #[arg(long, value_enum)]
    pub recon_norm: Option<NormArg>,
    #[arg(long, value_enum)]
    pub reg_target: Option<RegTargetArg>,
    #[command(flatten)]
    pub stage: StageArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    SquaredL2,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegTargetArg {
    Sample,
    Mean,
}

#[derive(Debug, Args)]
pub struct TrainFlowArgs {
    #[arg(long, value_enum)]
    pub latent: Option<LatentSetting>,
    #[command(flatten)]
    pub stage: StageArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Euler steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeArg {
    Taylor,
    Equilibrium,
    Robustness,
    Sensitivity,
    Generation,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EquilibriumArg {
    Surrogate,
    Mc,
    Both,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub probe: Vec<ProbeArg>,
    /// Variance weight for equilibrium predictions (default: the tokenizer's, else 1e-2).
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// `tokenizer`, `identity`, or `linear:a11,a12,a21,a22`.
    #[arg(long, default_value = "tokenizer")]
    pub decoder: String,
    /// Latent points per probe.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Monte-Carlo draws per point.
    #[arg(long, default_value_t = 100_000)]
    pub mc: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub equilibrium_mode: EquilibriumArg,
    /// Perturbation scales as multiples of the latent std.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0])]
    pub rho: Vec<f64>,
    /// Mixture points for the robustness probe.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Sensitivity grid resolution per axis.
    #[arg(long, default_value_t = 48)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    Fig1,
    Fig2,
    #[value(name = "table2-trend")]
    Table2Trend,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    /// Generated points per pipeline.
    #[arg(long, default_value_t = 20_000)]
    pub n_gen: usize,
    /// Stop launching new runs once this many minutes have elapsed.
    #[arg(long)]
    pub budget_mins: Option<f64>,
    /// Override tokenizer and flow iterations (smoke runs).
    #[arg(long)]
    pub iterations: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShowConfigArgs {
    /// JSON instead of TOML.
    #[arg(long)]
    pub json: bool,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Refused(_) => 4,
        Error::Usage(_) | Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be >= 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut cfg = base_config(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match cli.command {
        Command::BuildData(a) => build_data(&mut cfg, &out, a),
        Command::TrainTokenizer(a) => train_tokenizer_cmd(&mut cfg, &out, a),
        Command::TrainFlow(a) => train_flow_cmd(&mut cfg, &out, a),
        Command::Sample(a) => sample_cmd(&mut cfg, &out, a),
        Command::Analyze(a) => analyze_cmd(&cfg, &out, a),
        Command::Reproduce(a) => reproduce_cmd(&cfg, &out, a),
        Command::DescribeCheckpoint(a) => {
            let bytes = fs::read(&a.path).map_err(|e| Error::io(&a.path, e))?;
            let header = Checkpoint::parse_header(&bytes, &a.path)?;
            println!("{}", serde_json::to_string_pretty(&header)?);
            Ok(())
        }
        Command::ShowConfig(a) => {
            if a.json {
                println!("{}", cfg.to_json()?);
            } else {
                print!("{}", cfg.to_toml()?);
            }
            Ok(())
        }
    }
}

fn base_config(cli: &Cli) -> Result<TrainingConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut c = TrainingConfig::load(path)?;
            if let Some(p) = cli.profile {
                let fresh = TrainingConfig::for_profile(p, c.seed);
                for (dst, src) in [
                    (&mut c.tokenizer.train, fresh.tokenizer.train),
                    (&mut c.flow.train, fresh.flow.train),
                ] {
                    dst.iterations = src.iterations;
                    dst.batch_size = src.batch_size;
                    dst.depth = src.depth;
                    dst.hidden = src.hidden;
                }
                c.profile = p;
            }
            c
        }
        None => TrainingConfig::for_profile(cli.profile.unwrap_or_default(), 0),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_stage(stage: &mut StageConfig, a: &StageArgs) {
    if let Some(v) = a.iterations {
        stage.iterations = v;
    }
    if let Some(v) = a.batch_size {
        stage.batch_size = v;
    }
    if let Some(v) = a.lr {
        stage.lr = v;
    }
    if let Some(s) = a.schedule {
        stage.schedule = match s {
            ScheduleArg::Constant => ScheduleMode::Constant,
            ScheduleArg::Warmup => ScheduleMode::Warmup { warmup_frac: 0.02 },
            ScheduleArg::InverseSqrt => ScheduleMode::InverseSqrt {
                warmup_frac: 0.02,
                ref_steps: (stage.iterations / 20).max(1),
            },
        };
    }
    if let Some(v) = a.log_every {
        stage.log_every = v;
    }
    if let Some(v) = a.ckpt_every {
        stage.ckpt_every = v;
    }
    if let Some(v) = a.layers {
        stage.depth = v;
    }
    if let Some(v) = a.hidden {
        stage.hidden = v;
    }
}

fn apply_loss(loss: &mut LossConfig, a: &TrainTokenizerArgs) -> Result<()> {
    if let Some(m) = a.mode {
        loss.mode = match m {
            ModeArg::Kl => LossMode::Kl { beta: 1e-3 },
            ModeArg::Ve => LossMode::ve(1e-2),
            ModeArg::FixedVar => LossMode::FixedVar { sigma: 0.1 },
            ModeArg::NegVar => LossMode::CandidateNegVar { alpha: 1e-2 },
            ModeArg::LogEntropy => LossMode::CandidateLogEntropy { beta_log: 1e-2 },
        };
    }
    match &mut loss.mode {
        LossMode::Kl { beta } => {
            if let Some(v) = a.beta {
                *beta = v;
            }
        }
        LossMode::Ve {
            lambda1,
            lambda2,
            tau,
            delta,
        } => {
            for (dst, src) in [
                (lambda1, a.lambda1),
                (lambda2, a.lambda2),
                (tau, a.tau),
                (delta, a.delta),
            ] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
        }
        LossMode::FixedVar { sigma } => {
            if let Some(v) = a.sigma {
                *sigma = v;
            }
        }
        LossMode::CandidateNegVar { alpha } => {
            if let Some(v) = a.alpha {
                *alpha = v;
            }
        }
        LossMode::CandidateLogEntropy { beta_log } => {
            if let Some(v) = a.beta_log {
                *beta_log = v;
            }
        }
    }
    let m = loss.mode;
    let given = [
        ("beta", a.beta.is_some(), matches!(m, LossMode::Kl { .. })),
        (
            "lambda1",
            a.lambda1.is_some(),
            matches!(m, LossMode::Ve { .. }),
        ),
        (
            "lambda2",
            a.lambda2.is_some(),
            matches!(m, LossMode::Ve { .. }),
        ),
        ("tau", a.tau.is_some(), matches!(m, LossMode::Ve { .. })),
        ("delta", a.delta.is_some(), matches!(m, LossMode::Ve { .. })),
        (
            "sigma",
            a.sigma.is_some(),
            matches!(m, LossMode::FixedVar { .. }),
        ),
        (
            "alpha",
            a.alpha.is_some(),
            matches!(m, LossMode::CandidateNegVar { .. }),
        ),
        (
            "beta-log",
            a.beta_log.is_some(),
            matches!(m, LossMode::CandidateLogEntropy { .. }),
        ),
    ];
    if let Some((flag, _, _)) = given.iter().find(|(_, set, fits)| *set && !*fits) {
        return Err(Error::Usage(format!(
            "--{flag} does not apply to loss mode {}",
            m.label()
        )));
    }
    if let Some(n) = a.recon_norm {
        loss.recon_norm = match n {
            NormArg::SquaredL2 => ReconNorm::SquaredL2,
            NormArg::L2 => ReconNorm::L2,
        };
    }
    if let Some(t) = a.reg_target {
        loss.reg_target = match t {
            RegTargetArg::Sample => RegTarget::Sample,
            RegTargetArg::Mean => RegTarget::Mean,
        };
    }
    Ok(())
}

fn build_data(cfg: &mut TrainingConfig, out: &Path, a: BuildDataArgs) -> Result<()> {
    if let Some(v) = a.depth {
        cfg.mixture.depth = v;
    }
    if let Some(v) = a.segs {
        cfg.mixture.segs_per_branch = v;
    }
    if let Some(v) = a.mixture_seed {
        cfg.mixture.seed = v;
    }
    cfg.validate()?;
    let _lock = DirLock::acquire(out)?;
    let path = out.join(layout::MIXTURE);
    if path.exists() && !a.force {
        return Err(Error::Refused(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    let m = MixtureModel::fractal(
        cfg.mixture.depth,
        cfg.mixture.segs_per_branch,
        cfg.mixture.seed,
        cfg.mixture.perturb,
    )?;
    emit(out, layout::MIXTURE, m.to_text().as_bytes())?;
    let _ = fs::remove_file(out.join(layout::VALIDITY));
    let preview = m.sample(PREVIEW_POINTS, cfg.mixture.seed);
    let svg = scatter_svg(
        &format!("fractal mixture: {} components", m.len()),
        FIGURE_WINDOW,
        &[Layer {
            points: &preview,
            color: "#1f3a93",
            opacity: 0.35,
            radius: 0.8,
        }],
    );
    emit(out, layout::MIXTURE_SVG, svg.as_bytes())?;
    println!("wrote {} ({} components)", path.display(), m.len());
    Ok(())
}

fn load_mixture(out: &Path) -> Result<(MixtureModel, String)> {
    let path = out.join(layout::MIXTURE);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "no mixture at {}; run `velab build-data` first",
            path.display()
        )));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Format {
        kind: "mixture",
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok((MixtureModel::from_text(&text, &path)?, sha256_hex(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
struct ValidityCache {
    mixture_sha256: String,
    samples: usize,
    percentile: f64,
    log_threshold: f64,
}

/// Validity oracle for the directory's mixture, cached next to it.
fn load_validity(out: &Path, m: &MixtureModel, sha: &str) -> Result<ValidityOracle> {
    let path = out.join(layout::VALIDITY);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(c) = serde_json::from_str::<ValidityCache>(&text) {
            if c.mixture_sha256 == sha
                && c.samples == VALIDITY_SAMPLES
                && c.percentile == VALIDITY_PERCENTILE
            {
                return ValidityOracle::with_threshold(m, c.log_threshold);
            }
        }
    }
    let oracle = experiments::standard_validity(m)?;
    artifacts::write_json(
        &path,
        &ValidityCache {
            mixture_sha256: sha.to_string(),
            samples: VALIDITY_SAMPLES,
            percentile: VALIDITY_PERCENTILE,
            log_threshold: oracle.log_threshold,
        },
    )?;
    Ok(oracle)
}

/// Writes metrics lines and checkpoints of one training stage.
struct StageSink {
    dir: PathBuf,
    metrics: JsonlWriter,
}

impl StageSink {
    fn save_checkpoint(&mut self, ck: Checkpoint) -> Result<()> {
        self.metrics.flush()?;
        ck.save(&self.dir.join(layout::CHECKPOINT))
    }
}

impl TrainingSink<LatentBatchStats, TokenizerTrainer> for StageSink {
    fn record(&mut self, r: &LatentBatchStats) -> Result<()> {
        self.metrics.write(r)
    }

    fn checkpoint(&mut self, t: &TokenizerTrainer) -> Result<()> {
        self.save_checkpoint(t.to_checkpoint())
    }
}

impl TrainingSink<FlowRecord, FlowTrainer> for StageSink {
    fn record(&mut self, r: &FlowRecord) -> Result<()> {
        self.metrics.write(r)
    }

    fn checkpoint(&mut self, t: &FlowTrainer) -> Result<()> {
        self.save_checkpoint(t.to_checkpoint())
    }
}

/// Loads the stage checkpoint for `--resume`, or checks that a fresh start is allowed.
fn prepare_stage(dir: &Path, stage: &StageArgs, hash: &str) -> Result<Option<Checkpoint>> {
    let ck_path = dir.join(layout::CHECKPOINT);
    if stage.resume {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.header.config_hash != hash {
            return Err(Error::Refused(format!(
                "checkpoint {} was written by a different configuration (hash {} vs {})",
                ck_path.display(),
                ck.header.config_hash,
                hash
            )));
        }
        Ok(Some(ck))
    } else {
        if ck_path.exists() && !stage.force {
            return Err(Error::Refused(format!(
                "{} exists; pass --resume to continue or --force to start over",
                ck_path.display()
            )));
        }
        Ok(None)
    }
}

fn finish_stage(dir: &Path, cfg: &TrainingConfig) -> Result<()> {
    emit(dir, layout::CONFIG, cfg.to_toml()?.as_bytes())?;
    let mut m = Manifest::load_or_default(dir)?;
    m.record(dir, layout::CHECKPOINT)?;
    m.record(dir, layout::METRICS)?;
    m.save(dir)
}

fn train_tokenizer_cmd(cfg: &mut TrainingConfig, out: &Path, a: TrainTokenizerArgs) -> Result<()> {
    apply_stage(&mut cfg.tokenizer.train, &a.stage);
    apply_loss(&mut cfg.tokenizer.loss, &a)?;
    cfg.validate()?;
    let (m, sha) = load_mixture(out)?;
    let dir = out.join(layout::TOKENIZER);
    let _lock = DirLock::acquire(&dir)?;
    let hash = cfg.tokenizer_hash(&sha);
    let settings = cfg.tokenizer.train.settings(cfg.seed);
    let loss = cfg.tokenizer.loss;
    let resumed = prepare_stage(&dir, &a.stage, &hash)?;
    let mut trainer = match &resumed {
        Some(ck) => TokenizerTrainer::from_checkpoint(ck, &m, loss, settings)?,
        None => TokenizerTrainer::new(&m, loss, settings, &hash)?,
    };
    let metrics = JsonlWriter::open(
        &dir.join(layout::METRICS),
        &hash,
        resumed.as_ref().map(|c| c.header.iteration),
    )?;
    let mut sink = StageSink {
        dir: dir.clone(),
        metrics,
    };
    let start = Instant::now();
    trainer.run_until(a.stage.stop_after.unwrap_or(u64::MAX), &mut sink)?;
    sink.metrics.flush()?;
    finish_stage(&dir, cfg)?;
    println!(
        "tokenizer {} at iteration {}/{} in {:.1}s -> {}",
        loss.mode.label(),
        trainer.iteration(),
        settings.iterations,
        start.elapsed().as_secs_f64(),
        dir.join(layout::CHECKPOINT).display()
    );
    Ok(())
}

fn load_tokenizer(out: &Path) -> Result<(TokenizerModel, LossConfig, Checkpoint)> {
    let path = out.join(layout::TOKENIZER).join(layout::CHECKPOINT);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "no tokenizer checkpoint at {}; run `velab train-tokenizer` first",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?;
    let model = TokenizerModel::from_checkpoint(&ck)?;
    let loss = tokenizer::checkpoint_loss_config(&ck)?;
    Ok((model, loss, ck))
}

fn train_flow_cmd(cfg: &mut TrainingConfig, out: &Path, a: TrainFlowArgs) -> Result<()> {
    apply_stage(&mut cfg.flow.train, &a.stage);
    if let Some(l) = a.latent {
        cfg.flow.latent = l;
    }
    cfg.validate()?;
    let (m, sha) = load_mixture(out)?;
    let (source, tok_hash) = if cfg.flow.latent == LatentSetting::Raw {
        (LatentSource::Raw, None)
    } else {
        let (model, loss, ck) = load_tokenizer(out)?;
        (
            LatentSource::tokenizer(model, &loss, cfg.flow.latent.choice()),
            Some(ck.header.config_hash),
        )
    };
    let dir = out.join(layout::FLOW);
    let _lock = DirLock::acquire(&dir)?;
    let hash = cfg.flow_hash(&sha, tok_hash.as_deref());
    let settings = cfg.flow.train.settings(cfg.seed);
    let resumed = prepare_stage(&dir, &a.stage, &hash)?;
    let mut trainer = match &resumed {
        Some(ck) => FlowTrainer::from_checkpoint(ck, &m, source, settings)?,
        None => FlowTrainer::new(&m, source, settings, &hash)?,
    };
    let metrics = JsonlWriter::open(
        &dir.join(layout::METRICS),
        &hash,
        resumed.as_ref().map(|c| c.header.iteration),
    )?;
    let mut sink = StageSink {
        dir: dir.clone(),
        metrics,
    };
    let start = Instant::now();
    trainer.run_until(a.stage.stop_after.unwrap_or(u64::MAX), &mut sink)?;
    sink.metrics.flush()?;
    finish_stage(&dir, cfg)?;
    println!(
        "flow ({}) at iteration {}/{} in {:.1}s -> {}",
        trainer.source().label(),
        trainer.iteration(),
        settings.iterations,
        start.elapsed().as_secs_f64(),
        dir.join(layout::CHECKPOINT).display()
    );
    Ok(())
}

/// Flow network plus the decoder its latents belong to.
fn load_generator(out: &Path) -> Result<(FlowNetwork, Box<dyn LatentDecoder>)> {
    let path = out.join(layout::FLOW).join(layout::CHECKPOINT);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "no flow checkpoint at {}; run `velab train-flow` first",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?;
    let flow = FlowNetwork::from_checkpoint(&ck)?;
    let raw = ck
        .header
        .extra
        .get("latent_source")
        .and_then(|v| v.as_str())
        == Some("raw");
    let decoder: Box<dyn LatentDecoder> = if raw {
        Box::new(IdentityDecoder)
    } else {
        Box::new(load_tokenizer(out)?.0)
    };
    Ok((flow, decoder))
}

fn sample_cmd(cfg: &mut TrainingConfig, out: &Path, a: SampleArgs) -> Result<()> {
    if let Some(s) = a.steps {
        cfg.sampler.steps = s;
    }
    cfg.validate()?;
    let (m, _) = load_mixture(out)?;
    let (flow, decoder) = load_generator(out)?;
    let mut rng = RngStream::new(cfg.seed, streams::BASE_NOISE);
    let latents = flow::euler_sample(&flow, a.n, cfg.sampler, &mut rng)?;
    let points = decoder.decode(&latents)?.to_points();
    let dir = out.join(layout::SAMPLES);
    let _lock = DirLock::acquire(&dir)?;
    emit(
        &dir,
        layout::POINTS,
        artifacts::points_to_text(&points).as_bytes(),
    )?;
    emit(
        &dir,
        layout::LATENTS,
        artifacts::points_to_text(&latents.to_points()).as_bytes(),
    )?;
    let oracle = m.sample(OVERLAY_POINTS, cfg.seed.wrapping_add(1));
    let svg = generation_svg(
        &format!("{} samples, {} Euler steps", a.n, cfg.sampler.steps),
        &oracle,
        &points,
    );
    emit(&dir, layout::POINTS_SVG, svg.as_bytes())?;
    println!(
        "wrote {} points to {}",
        points.len(),
        dir.join(layout::POINTS).display()
    );
    Ok(())
}

fn generation_svg(title: &str, oracle: &[[f64; 2]], generated: &[[f64; 2]]) -> String {
    scatter_svg(
        title,
        FIGURE_WINDOW,
        &[
            Layer {
                points: oracle,
                color: "#9db4d8",
                opacity: 0.35,
                radius: 0.8,
            },
            Layer {
                points: generated,
                color: "#1b1b1b",
                opacity: 0.6,
                radius: 0.8,
            },
        ],
    )
}

/// Outcome of one probe; failures do not abort the others.
#[derive(Debug, Serialize)]
struct ProbeOutcome {
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl ProbeOutcome {
    fn from(r: Result<serde_json::Value>) -> Self {
        match r {
            Ok(v) => Self {
                ok: true,
                result: Some(v),
                error: None,
            },
            Err(e) => Self {
                ok: false,
                result: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalysisReport {
    schema_version: u32,
    decoder: String,
    lambda1: f64,
    probes: std::collections::BTreeMap<String, ProbeOutcome>,
}

fn parse_linear(spec: &str) -> Result<LinearDecoder> {
    let vals: Vec<f64> = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Usage(format!("bad linear decoder {spec:?}: {e}")))?;
    if vals.len() != 4 {
        return Err(Error::Usage(
            "linear decoder needs four entries a11,a12,a21,a22".into(),
        ));
    }
    Ok(LinearDecoder::new([[vals[0], vals[1]], [vals[2], vals[3]]]))
}

fn analyze_cmd(cfg: &TrainingConfig, out: &Path, a: AnalyzeArgs) -> Result<()> {
    let probes: Vec<ProbeArg> = if a.probe.contains(&ProbeArg::All) {
        vec![
            ProbeArg::Taylor,
            ProbeArg::Equilibrium,
            ProbeArg::Robustness,
            ProbeArg::Sensitivity,
            ProbeArg::Generation,
        ]
    } else {
        a.probe.clone()
    };
    let tokenizer = load_tokenizer(out).ok();
    let decoder: Box<dyn LatentDecoder> = match a.decoder.as_str() {
        "tokenizer" => match &tokenizer {
            Some((model, _, _)) => Box::new(model.clone()),
            None => Box::new(UnavailableDecoder),
        },
        "identity" => Box::new(IdentityDecoder),
        s if s.starts_with("linear:") => Box::new(parse_linear(&s["linear:".len()..])?),
        s => return Err(Error::Usage(format!("unknown decoder {s:?}"))),
    };
    let lambda1 = a
        .lambda1
        .unwrap_or(match tokenizer.as_ref().map(|t| t.1.mode) {
            Some(LossMode::Ve { lambda1, .. }) if lambda1 > 0.0 => lambda1,
            _ => 1e-2,
        });
    let mixture = load_mixture(out).ok();
    let mut rng = RngStream::new(cfg.seed, streams::PROBE);

    // latent probe points: encoded mixture samples when available, else N(0, I)
    let probe_points: Vec<[f64; 2]> = match (&tokenizer, &mixture, a.decoder.as_str()) {
        (Some((model, _, _)), Some((m, _)), "tokenizer") => model
            .encode(&Matrix::from_points(&m.sample(a.points, cfg.seed)))?
            .mu
            .to_points(),
        _ => (0..a.points)
            .map(|_| [rng.normal(), rng.normal()])
            .collect(),
    };

    let dir = out.join(layout::ANALYSIS);
    let _lock = DirLock::acquire(&dir)?;
    let mut report = AnalysisReport {
        schema_version: analysis::SCHEMA_VERSION,
        decoder: a.decoder.clone(),
        lambda1,
        probes: Default::default(),
    };
    for probe in probes {
        let (name, outcome) = match probe {
            ProbeArg::Taylor => (
                "taylor",
                (|| {
                    let tcfg = TaylorConfig {
                        mc: a.mc,
                        ..Default::default()
                    };
                    let rows = probe_points
                        .iter()
                        .map(|mu| taylor_slope_check(decoder.as_ref(), *mu, &tcfg, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    let max_dev = rows.iter().map(|r| r.rel_deviation).fold(0.0, f64::max);
                    Ok(serde_json::json!({ "max_rel_deviation": max_dev, "points": rows }))
                })(),
            ),
            ProbeArg::Equilibrium => (
                "equilibrium",
                (|| {
                    let modes: Vec<EquilibriumMode> = match a.equilibrium_mode {
                        EquilibriumArg::Surrogate => vec![EquilibriumMode::Surrogate],
                        EquilibriumArg::Mc => vec![EquilibriumMode::MonteCarlo { mc: a.mc }],
                        EquilibriumArg::Both => vec![
                            EquilibriumMode::Surrogate,
                            EquilibriumMode::MonteCarlo { mc: a.mc },
                        ],
                    };
                    let mut by_mode = serde_json::Map::new();
                    for mode in modes {
                        let ecfg = EquilibriumConfig {
                            lambda1,
                            mode,
                            ..Default::default()
                        };
                        let rows = probe_points
                            .iter()
                            .take(5)
                            .map(|mu| equilibrium_check(decoder.as_ref(), *mu, &ecfg, &mut rng))
                            .collect::<Result<Vec<_>>>()?;
                        let key = match mode {
                            EquilibriumMode::Surrogate => "surrogate",
                            EquilibriumMode::MonteCarlo { .. } => "monte_carlo",
                        };
                        by_mode.insert(key.into(), serde_json::to_value(rows)?);
                    }
                    let lambdas = [1e-3, 1e-2, 1e-1];
                    let mu0 = probe_points.first().copied().unwrap_or([0.0, 0.0]);
                    let sigmas = lambdas
                        .iter()
                        .map(|&l| {
                            let ecfg = EquilibriumConfig {
                                lambda1: l,
                                ..Default::default()
                            };
                            Ok(equilibrium_check(decoder.as_ref(), mu0, &ecfg, &mut rng)?
                                .learned_sigma)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    by_mode.insert(
                    "scaling".into(),
                    serde_json::json!({ "lambda1": lambdas, "sigma": sigmas, "log_slope": log_log_slope(&lambdas, &sigmas) }),
                );
                    Ok(serde_json::Value::Object(by_mode))
                })(),
            ),
            ProbeArg::Robustness => (
                "robustness",
                (|| {
                    let (model, _, _) = tokenizer.as_ref().ok_or_else(|| {
                        Error::InvalidArgument(
                            "robustness probe needs a tokenizer checkpoint".into(),
                        )
                    })?;
                    let (m, sha) = mixture.as_ref().ok_or_else(|| {
                        Error::InvalidArgument("robustness probe needs a mixture".into())
                    })?;
                    let oracle = load_validity(out, m, sha)?;
                    Ok(serde_json::to_value(robustness_probe(
                        model, m, &oracle, &a.rho, a.n, cfg.seed,
                    )?)?)
                })(),
            ),
            ProbeArg::Sensitivity => (
                "sensitivity",
                (|| {
                    let spread = probe_points
                        .iter()
                        .flat_map(|p| p.iter().map(|v| v.abs()))
                        .fold(0.0f64, f64::max)
                        .max(1.0)
                        * 1.2;
                    let grid = latent_grid(-spread, spread, a.grid.max(1));
                    let field = sensitivity_field(
                        decoder.as_ref(),
                        &grid,
                        lambda1,
                        analysis::DEFAULT_FD_STEP,
                    )?;
                    emit(&dir, "sensitivity.txt", field.to_text().as_bytes())?;
                    let ts: Vec<f64> = field.points.iter().map(|p| p.t).collect();
                    emit(
                        &dir,
                        "sensitivity.svg",
                        heatmap_svg(
                            &format!("T(mu) over [-{spread:.2}, {spread:.2}]^2"),
                            a.grid.max(1),
                            &ts,
                            true,
                        )
                        .as_bytes(),
                    )?;
                    if let (Some((model, _, _)), Some((m, _))) = (&tokenizer, &mixture) {
                        let x = Matrix::from_points(&m.sample(OVERLAY_POINTS.min(5_000), cfg.seed));
                        let enc = model.encode(&x)?;
                        let var: Vec<f64> = enc
                            .log_var
                            .iter_rows()
                            .map(|r| r.iter().map(|v| v.exp()).sum::<f64>() / r.len() as f64)
                            .collect();
                        let window = enc
                            .mu
                            .as_slice()
                            .iter()
                            .fold(0.0f64, |a, v| a.max(v.abs()))
                            .max(1e-6)
                            * 1.1;
                        emit(
                            &dir,
                            "latent.svg",
                            colored_scatter_svg(
                                "latent mu colored by sigma^2",
                                window,
                                &enc.mu.to_points(),
                                &var,
                            )
                            .as_bytes(),
                        )?;
                    }
                    let tmax = ts.iter().copied().fold(0.0, f64::max);
                    let tmean = ts.iter().sum::<f64>() / ts.len().max(1) as f64;
                    Ok(
                        serde_json::json!({ "grid": a.grid, "half_width": spread, "t_mean": tmean, "t_max": tmax }),
                    )
                })(),
            ),
            ProbeArg::Generation => (
                "generation",
                (|| {
                    let (m, sha) = mixture.as_ref().ok_or_else(|| {
                        Error::InvalidArgument("generation report needs a mixture".into())
                    })?;
                    let path = out.join(layout::SAMPLES).join(layout::POINTS);
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let pts = artifacts::points_from_text(&text, &path)?;
                    let oracle = load_validity(out, m, sha)?;
                    let reference = experiments::reference_points(m, pts.len().max(1), cfg.seed);
                    Ok(serde_json::to_value(generation_report(
                        &pts, m, &oracle, &reference,
                    )?)?)
                })(),
            ),
            ProbeArg::All => unreachable!("expanded above"),
        };
        report
            .probes
            .insert(name.to_string(), ProbeOutcome::from(outcome));
    }
    emit(
        &dir,
        layout::REPORT,
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    for (name, p) in &report.probes {
        match &p.error {
            None => println!("{name}: ok"),
            Some(e) => println!("{name}: failed ({e})"),
        }
    }
    println!("wrote {}", dir.join(layout::REPORT).display());
    Ok(())
}

/// Stands in when no tokenizer checkpoint exists; every probe using it fails in isolation.
struct UnavailableDecoder;

impl LatentDecoder for UnavailableDecoder {
    fn decode(&self, _z: &Matrix) -> Result<Matrix> {
        Err(Error::InvalidArgument(
            "no tokenizer checkpoint; train one or pass --decoder".into(),
        ))
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    tokenizer: TokenizerSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    generation: Option<analysis::GenerationReport>,
}

/// Persists one in-memory pipeline under `dir`.
fn persist_run(
    dir: &Path,
    m: &MixtureModel,
    seed: u64,
    tok: &experiments::TokenizerRun,
    pipe: Option<&experiments::PipelineRun>,
) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut ck = Checkpoint::new(tokenizer::CHECKPOINT_KIND, "reproduce", 0);
    ck.add_network("encoder", &tok.model.encoder);
    ck.add_network("decoder", &tok.model.decoder);
    ck.header
        .extra
        .insert("loss".into(), serde_json::to_value(tok.loss)?);
    emit(dir, "tokenizer.bin", &ck.to_bytes())?;
    let mut metrics = String::new();
    for r in &tok.records {
        metrics.push_str(&serde_json::to_string(r)?);
        metrics.push('\n');
    }
    emit(dir, "tokenizer_metrics.jsonl", metrics.as_bytes())?;
    let x = Matrix::from_points(&m.sample(5_000, seed.wrapping_add(11)));
    let enc = tok.model.encode(&x)?;
    let var: Vec<f64> = enc
        .log_var
        .iter_rows()
        .map(|r| r.iter().map(|v| v.exp()).sum::<f64>() / 2.0)
        .collect();
    let window = enc
        .mu
        .as_slice()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-6)
        * 1.1;
    emit(
        dir,
        "latent.svg",
        colored_scatter_svg(
            &format!("{} latent mu colored by sigma^2", tok.loss.mode.label()),
            window,
            &enc.mu.to_points(),
            &var,
        )
        .as_bytes(),
    )?;
    let recon = tok.model.decode(&enc.mu)?.to_points();
    emit(
        dir,
        "reconstruction.svg",
        generation_svg(
            &format!("{} reconstructions D(mu)", tok.loss.mode.label()),
            &x.to_points(),
            &recon,
        )
        .as_bytes(),
    )?;
    if let Some(p) = pipe {
        let mut fck = Checkpoint::new(flow::CHECKPOINT_KIND, "reproduce", 0);
        fck.add_network("flow", &p.flow.flow.net);
        emit(dir, "flow.bin", &fck.to_bytes())?;
        emit(
            dir,
            layout::POINTS,
            artifacts::points_to_text(&p.generated).as_bytes(),
        )?;
        let oracle = m.sample(OVERLAY_POINTS, seed.wrapping_add(1));
        emit(
            dir,
            layout::POINTS_SVG,
            generation_svg(
                &format!("{} generations", tok.loss.mode.label()),
                &oracle,
                &p.generated,
            )
            .as_bytes(),
        )?;
    }
    let summary = RunSummary {
        tokenizer: TokenizerSummary::of(tok),
        generation: pipe.map(|p| p.report),
    };
    emit(
        dir,
        "summary.json",
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct Comparison {
    schema_version: u32,
    figure: Figure,
    seed: u64,
    partial: bool,
    runs: Vec<(String, RunSummary)>,
    checks: std::collections::BTreeMap<String, bool>,
}

fn reproduce_cmd(cfg: &TrainingConfig, out: &Path, a: ReproduceArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(it) = a.iterations {
        cfg.tokenizer.train.iterations = it;
        cfg.flow.train.iterations = it;
    }
    let _lock = DirLock::acquire(out)?;
    let m = MixtureModel::fractal(
        cfg.mixture.depth,
        cfg.mixture.segs_per_branch,
        cfg.mixture.seed,
        cfg.mixture.perturb,
    )?;
    let data_dir = out.join("data");
    emit(&data_dir, layout::MIXTURE, m.to_text().as_bytes())?;
    let needs_generation = a.figure == Figure::Fig1;
    let oracle = if needs_generation {
        Some(experiments::standard_validity(&m)?)
    } else {
        None
    };

    let plan: Vec<(String, LossMode)> = match a.figure {
        Figure::Fig1 => vec![
            ("kl".into(), LossMode::Kl { beta: 1e-3 }),
            ("ve".into(), LossMode::ve(1e-2)),
        ],
        Figure::Fig2 => vec![
            ("kl-strong".into(), LossMode::Kl { beta: 1.0 }),
            ("ve".into(), LossMode::ve(1e-2)),
        ],
        Figure::Table2Trend => [1e-6, 1e-2, 1.0, 8.0]
            .iter()
            .map(|&b| (format!("kl-beta-{b:e}"), LossMode::Kl { beta: b }))
            .chain(std::iter::once(("ve".to_string(), LossMode::ve(1e-2))))
            .collect(),
    };
    let over_budget = || {
        a.budget_mins
            .is_some_and(|b| start.elapsed().as_secs_f64() / 60.0 > b)
    };
    let mut runs = Vec::new();
    let mut partial = false;
    for (name, mode) in &plan {
        if over_budget() {
            partial = true;
            eprintln!("time budget exhausted before run {name}");
            break;
        }
        let loss = LossConfig {
            mode: *mode,
            ..cfg.tokenizer.loss
        };
        let dir = out.join(name);
        let summary = if let Some(oracle) = &oracle {
            let p = experiments::full_pipeline(&m, oracle, &cfg, loss, a.n_gen)?;
            persist_run(&dir, &m, cfg.seed, &p.tokenizer, Some(&p))?
        } else {
            let t = experiments::train_tokenizer(&m, &cfg, loss)?;
            persist_run(&dir, &m, cfg.seed, &t, None)?
        };
        println!(
            "{name}: mean sigma^2 {:.3e}, recon mse {:.3e}{}",
            summary.tokenizer.mean_var,
            summary.tokenizer.recon_mse,
            summary
                .generation
                .map(|g| format!(", gen nll {:.4}, valid {:.4}", g.mean_nll, g.valid_fraction))
                .unwrap_or_default()
        );
        runs.push((name.clone(), summary));
    }

    let mut tampered = Vec::new();
    for dir in std::iter::once(data_dir.clone()).chain(runs.iter().map(|(n, _)| out.join(n))) {
        tampered.extend(
            Manifest::load_or_default(&dir)?
                .verify(&dir)
                .into_iter()
                .map(|f| format!("{}/{f}", dir.display())),
        );
    }
    if !tampered.is_empty() {
        return Err(Error::Format {
            kind: "manifest",
            path: out.to_path_buf(),
            message: format!("artifacts changed after writing: {tampered:?}"),
        });
    }

    let get = |n: &str| runs.iter().find(|(k, _)| k == n).map(|(_, s)| s);
    let mut checks = std::collections::BTreeMap::new();
    match a.figure {
        Figure::Fig1 => {
            if let (Some(kl), Some(ve)) = (get("kl"), get("ve")) {
                if let (Some(gk), Some(gv)) = (kl.generation, ve.generation) {
                    checks.insert("ve_nll_below_kl".into(), gv.mean_nll < gk.mean_nll);
                    checks.insert(
                        "ve_valid_above_kl".into(),
                        gv.valid_fraction > gk.valid_fraction,
                    );
                }
                checks.insert(
                    "kl_var_10x_below_ve".into(),
                    kl.tokenizer.mean_var * 10.0 <= ve.tokenizer.mean_var,
                );
            }
        }
        Figure::Fig2 => {
            if let (Some(kl), Some(ve)) = (get("kl-strong"), get("ve")) {
                checks.insert(
                    "strong_kl_recon_above_ve".into(),
                    kl.tokenizer.recon_mse > ve.tokenizer.recon_mse,
                );
            }
        }
        Figure::Table2Trend => {
            let sweep: Vec<&RunSummary> = runs
                .iter()
                .filter(|(n, _)| n.starts_with("kl-beta"))
                .map(|(_, s)| s)
                .collect();
            if sweep.len() == 4 {
                checks.insert(
                    "var_increasing_in_beta".into(),
                    sweep
                        .windows(2)
                        .all(|w| w[1].tokenizer.mean_var > w[0].tokenizer.mean_var),
                );
                checks.insert(
                    "recon_nondecreasing_in_beta".into(),
                    sweep
                        .windows(2)
                        .all(|w| w[1].tokenizer.recon_mse >= w[0].tokenizer.recon_mse),
                );
            }
        }
    }
    let cmp = Comparison {
        schema_version: analysis::SCHEMA_VERSION,
        figure: a.figure,
        seed: cfg.seed,
        partial,
        runs,
        checks,
    };
    emit(
        out,
        "comparison.json",
        (serde_json::to_string_pretty(&cmp)? + "\n").as_bytes(),
    )?;
    for (k, v) in &cmp.checks {
        println!("{k}: {}", if *v { "holds" } else { "does not hold" });
    }
    println!("wrote {}", out.join("comparison.json").display());
    Ok(())
}
