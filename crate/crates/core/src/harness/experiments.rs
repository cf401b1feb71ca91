//! In-memory experiment pipelines: tokenizer → flow → Euler sampling → oracle metrics.

use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use crate::analysis::{
    generation_report, GenerationReport, ValidityOracle, VALIDITY_PERCENTILE, VALIDITY_SAMPLES,
};
use crate::decoder::{IdentityDecoder, LatentDecoder};
use crate::error::Result;
use crate::flow::{generate, FlowNetwork, FlowRecord, FlowTrainer, LatentSource, SamplerConfig};
use crate::mixture::MixtureModel;
use crate::rng::{streams, RngStream};
use crate::tokenizer::{
    evaluate_tokenizer, LatentBatchStats, LossConfig, TokenizerEval, TokenizerModel,
    TokenizerTrainer,
};
use crate::train::MemorySink;

/// Held-out points for tokenizer evaluation.
pub const EVAL_POINTS: usize = 20_000;
/// Seed offset separating evaluation draws from training draws.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0001;
const REFERENCE_SEED_OFFSET: u64 = 0x5eed_0002;

/// Builds the validity oracle for a mixture with the standard sample size.
pub fn standard_validity(m: &MixtureModel) -> Result<ValidityOracle> {
    ValidityOracle::new(m, VALIDITY_SAMPLES, VALIDITY_PERCENTILE, 0)
}

#[derive(Debug, Clone)]
pub struct TokenizerRun {
    pub model: TokenizerModel,
    pub loss: LossConfig,
    pub eval: TokenizerEval,
    pub records: Vec<LatentBatchStats>,
}

pub fn train_tokenizer(
    m: &MixtureModel,
    cfg: &TrainingConfig,
    loss: LossConfig,
) -> Result<TokenizerRun> {
    let settings = cfg.tokenizer.train.settings(cfg.seed);
    let mut trainer = TokenizerTrainer::new(m, loss, settings, "in-memory")?;
    let mut sink = MemorySink::default();
    trainer.run(&mut sink)?;
    let eval = evaluate_tokenizer(
        &trainer.model,
        &loss,
        m,
        EVAL_POINTS,
        cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
    )?;
    Ok(TokenizerRun {
        model: trainer.model,
        loss,
        eval,
        records: sink.records,
    })
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub flow: FlowNetwork,
    pub records: Vec<FlowRecord>,
}

pub fn train_flow(m: &MixtureModel, cfg: &TrainingConfig, source: LatentSource) -> Result<FlowRun> {
    let settings = cfg.flow.train.settings(cfg.seed);
    let mut trainer = FlowTrainer::new(m, source, settings, "in-memory")?;
    let mut sink = MemorySink::default();
    trainer.run(&mut sink)?;
    Ok(FlowRun {
        flow: trainer.flow,
        records: sink.records,
    })
}

/// Generated data points for `seed`; base noise comes from the base-noise stream.
pub fn sample_points<D: LatentDecoder + ?Sized>(
    decoder: &D,
    flow: &FlowNetwork,
    n: usize,
    sampler: SamplerConfig,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let mut rng = RngStream::new(seed, streams::BASE_NOISE);
    generate(decoder, flow, n, sampler, &mut rng)
}

/// Oracle sample used as the histogram reference.
pub fn reference_points(m: &MixtureModel, n: usize, seed: u64) -> Vec<[f64; 2]> {
    m.sample(n, seed.wrapping_add(REFERENCE_SEED_OFFSET))
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub tokenizer: TokenizerRun,
    pub flow: FlowRun,
    pub generated: Vec<[f64; 2]>,
    pub report: GenerationReport,
}

/// Tokenizer with `loss`, flow on its latents, `n_gen` decoded Euler samples and their metrics.
pub fn full_pipeline(
    m: &MixtureModel,
    oracle: &ValidityOracle,
    cfg: &TrainingConfig,
    loss: LossConfig,
    n_gen: usize,
) -> Result<PipelineRun> {
    let tokenizer = train_tokenizer(m, cfg, loss)?;
    pipeline_from_tokenizer(m, oracle, cfg, tokenizer, n_gen)
}

pub fn pipeline_from_tokenizer(
    m: &MixtureModel,
    oracle: &ValidityOracle,
    cfg: &TrainingConfig,
    tokenizer: TokenizerRun,
    n_gen: usize,
) -> Result<PipelineRun> {
    let source = LatentSource::tokenizer(
        tokenizer.model.clone(),
        &tokenizer.loss,
        cfg.flow.latent.choice(),
    );
    let flow = train_flow(m, cfg, source)?;
    let generated = sample_points(&tokenizer.model, &flow.flow, n_gen, cfg.sampler, cfg.seed)?;
    let reference = reference_points(m, n_gen.max(1), cfg.seed);
    let report = generation_report(&generated, m, oracle, &reference)?;
    Ok(PipelineRun {
        tokenizer,
        flow,
        generated,
        report,
    })
}

/// Flow trained directly on data, decoded by the identity.
pub fn raw_pipeline(
    m: &MixtureModel,
    oracle: &ValidityOracle,
    cfg: &TrainingConfig,
    n_gen: usize,
) -> Result<(FlowRun, GenerationReport)> {
    let flow = train_flow(m, cfg, LatentSource::Raw)?;
    let generated = sample_points(&IdentityDecoder, &flow.flow, n_gen, cfg.sampler, cfg.seed)?;
    let reference = reference_points(m, n_gen.max(1), cfg.seed);
    let report = generation_report(&generated, m, oracle, &reference)?;
    Ok((flow, report))
}

/// Summary row of one tokenizer in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSummary {
    pub label: String,
    pub mean_var: f64,
    pub recon_mse: f64,
    pub recon_mse_sampled: f64,
    pub latent_std: f64,
}

impl TokenizerSummary {
    pub fn of(run: &TokenizerRun) -> Self {
        Self {
            label: run.loss.mode.label(),
            mean_var: run.eval.mean_var_avg,
            recon_mse: run.eval.recon_mse,
            recon_mse_sampled: run.eval.recon_mse_sampled,
            latent_std: run.eval.latent_std,
        }
    }
}
