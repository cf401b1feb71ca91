//! Gaussian-encoder tokenizer for 2D points and its loss family.
//!
//! The encoder emits `(μ, log σ²)` per point, the decoder maps a latent back
//! to data space. Losses: reconstruction plus one of β-weighted KL, variance
//! expansion `λ₁·1/(σ²+δ) + λ₂·exp(|z|−τ)`, a fixed-variance baseline, or the
//! two alternative variance terms (negative variance, log-entropy).

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixture::{MixtureModel, MixtureSampler};
use crate::nn::{AdamState, GradientBuffer, MlpNetwork};
use crate::rng::{streams, RngStream};
use crate::train::{ArchSpec, TrainSettings, TrainingSink};

pub const LATENT_DIM: usize = 2;
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 10.0;

pub const CHECKPOINT_KIND: &str = "tokenizer";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossMode {
    Kl {
        beta: f64,
    },
    Ve {
        lambda1: f64,
        lambda2: f64,
        tau: f64,
        delta: f64,
    },
    FixedVar {
        sigma: f64,
    },
    CandidateNegVar {
        alpha: f64,
    },
    CandidateLogEntropy {
        beta_log: f64,
    },
}

impl LossMode {
    /// VE with the regularizer weight, threshold and δ used for the toy runs.
    pub fn ve(lambda1: f64) -> Self {
        LossMode::Ve {
            lambda1,
            lambda2: 1e-6,
            tau: 1.0,
            delta: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "loss coefficient {name} must be finite and >= 0, got {v}"
                )))
            }
        };
        match *self {
            LossMode::Kl { beta } => check("beta", beta),
            LossMode::Ve {
                lambda1,
                lambda2,
                tau,
                delta,
            } => {
                check("lambda1", lambda1)?;
                check("lambda2", lambda2)?;
                check("tau", tau)?;
                check("delta", delta)?;
                if delta == 0.0 {
                    return Err(Error::Config("delta must be > 0".into()));
                }
                Ok(())
            }
            LossMode::FixedVar { sigma } => {
                check("sigma", sigma)?;
                if sigma == 0.0 {
                    return Err(Error::Config("fixed sigma must be > 0".into()));
                }
                Ok(())
            }
            LossMode::CandidateNegVar { alpha } => check("alpha", alpha),
            LossMode::CandidateLogEntropy { beta_log } => check("beta_log", beta_log),
        }
    }

    /// Whether the encoder's variance head is used.
    pub fn learns_variance(&self) -> bool {
        !matches!(self, LossMode::FixedVar { .. })
    }

    pub fn label(&self) -> String {
        match *self {
            LossMode::Kl { beta } => format!("kl-{beta:e}"),
            LossMode::Ve { lambda1, .. } => format!("ve-{lambda1:e}"),
            LossMode::FixedVar { sigma } => format!("fixed-{sigma:e}"),
            LossMode::CandidateNegVar { alpha } => format!("negvar-{alpha:e}"),
            LossMode::CandidateLogEntropy { beta_log } => format!("logent-{beta_log:e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReconNorm {
    /// `‖x − x̂‖²`
    #[default]
    SquaredL2,
    /// `‖x − x̂‖`
    L2,
}

/// Argument of the magnitude regularizer `exp(|·| − τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegTarget {
    #[default]
    Sample,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    #[serde(default)]
    pub recon_norm: ReconNorm,
    #[serde(default)]
    pub reg_target: RegTarget,
}

impl LossConfig {
    pub fn new(mode: LossMode) -> Self {
        Self {
            mode,
            recon_norm: ReconNorm::SquaredL2,
            reg_target: RegTarget::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    pub encoder: MlpNetwork,
    pub decoder: MlpNetwork,
}

/// Encoder output split into mean and clamped log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub mu: Matrix,
    pub log_var: Matrix,
    /// Log-variance before clamping.
    pub raw_log_var: Matrix,
}

impl TokenizerModel {
    pub fn new(arch: ArchSpec, rng: &mut RngStream) -> Result<Self> {
        let encoder = MlpNetwork::new(arch.mlp(2, 2 * LATENT_DIM), rng)?;
        let decoder = MlpNetwork::new(arch.mlp(LATENT_DIM, 2), rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn from_networks(encoder: MlpNetwork, decoder: MlpNetwork) -> Result<Self> {
        if encoder.input_dim() != 2 || encoder.output_dim() != 2 * LATENT_DIM {
            return Err(Error::shape(
                "TokenizerModel encoder",
                "2 -> 4",
                format!("{} -> {}", encoder.input_dim(), encoder.output_dim()),
            ));
        }
        if decoder.input_dim() != LATENT_DIM || decoder.output_dim() != 2 {
            return Err(Error::shape(
                "TokenizerModel decoder",
                "2 -> 2",
                format!("{} -> {}", decoder.input_dim(), decoder.output_dim()),
            ));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encode(&self, x: &Matrix) -> Result<Encoded> {
        split_encoder_output(&self.encoder.forward(x, None)?)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z, None)
    }

    /// Reads the encoder/decoder pair out of a tokenizer checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                ck.header.kind
            )));
        }
        Self::from_networks(ck.network("encoder")?, ck.network("decoder")?)
    }
}

fn split_encoder_output(out: &Matrix) -> Result<Encoded> {
    if out.cols() != 2 * LATENT_DIM {
        return Err(Error::shape("encoder output", 2 * LATENT_DIM, out.cols()));
    }
    let mu = out.columns(0, LATENT_DIM);
    let raw_log_var = out.columns(LATENT_DIM, 2 * LATENT_DIM);
    let mut log_var = raw_log_var.clone();
    for v in log_var.as_mut_slice() {
        *v = v.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
    }
    Ok(Encoded {
        mu,
        log_var,
        raw_log_var,
    })
}

/// `z = μ + exp(½ log σ²) ⊙ ε`. Returns `(z, ε)`.
pub fn reparameterize(
    mu: &Matrix,
    log_var: &Matrix,
    rng: &mut RngStream,
) -> Result<(Matrix, Matrix)> {
    let mut eps = Matrix::zeros(mu.rows(), mu.cols());
    rng.fill_normal(eps.as_mut_slice());
    let z = reparameterize_with(mu, log_var, &eps)?;
    Ok((z, eps))
}

pub fn reparameterize_with(mu: &Matrix, log_var: &Matrix, eps: &Matrix) -> Result<Matrix> {
    if mu.rows() != log_var.rows()
        || mu.cols() != log_var.cols()
        || eps.rows() != mu.rows()
        || eps.cols() != mu.cols()
    {
        return Err(Error::shape(
            "reparameterize",
            format!("{}x{}", mu.rows(), mu.cols()),
            format!(
                "{}x{} / {}x{}",
                log_var.rows(),
                log_var.cols(),
                eps.rows(),
                eps.cols()
            ),
        ));
    }
    let mut z = mu.clone();
    for ((zv, lv), e) in z
        .as_mut_slice()
        .iter_mut()
        .zip(log_var.as_slice())
        .zip(eps.as_slice())
    {
        *zv += (0.5 * lv).exp() * e;
    }
    Ok(z)
}

/// A scalar loss term and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Batch mean of `‖x − x̂‖²` or `‖x − x̂‖`; gradient is with respect to `x̂`.
pub fn recon_loss(x: &Matrix, x_hat: &Matrix, norm: ReconNorm) -> Result<TermGrad> {
    if x.rows() != x_hat.rows() || x.cols() != x_hat.cols() {
        return Err(Error::shape(
            "recon_loss",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", x_hat.rows(), x_hat.cols()),
        ));
    }
    let n = x.rows().max(1) as f64;
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut total = 0.0;
    for r in 0..x.rows() {
        let sq: f64 = x
            .row(r)
            .iter()
            .zip(x_hat.row(r))
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        match norm {
            ReconNorm::SquaredL2 => {
                total += sq;
                for ((g, a), b) in grad.row_mut(r).iter_mut().zip(x.row(r)).zip(x_hat.row(r)) {
                    *g = 2.0 * (b - a) / n;
                }
            }
            ReconNorm::L2 => {
                let d = sq.sqrt();
                total += d;
                if d > 0.0 {
                    for ((g, a), b) in grad.row_mut(r).iter_mut().zip(x.row(r)).zip(x_hat.row(r)) {
                        *g = (b - a) / (d * n);
                    }
                }
            }
        }
    }
    Ok(TermGrad {
        value: total / n,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlTerm {
    pub value: f64,
    pub grad_mu: Matrix,
    pub grad_log_var: Matrix,
}

/// `½ Σ_d (μ² + σ² − 1 − log σ²)` averaged over the batch.
pub fn kl_loss(mu: &Matrix, log_var: &Matrix) -> KlTerm {
    let n = mu.rows().max(1) as f64;
    let mut grad_mu = Matrix::zeros(mu.rows(), mu.cols());
    let mut grad_log_var = Matrix::zeros(mu.rows(), mu.cols());
    let mut total = 0.0;
    for i in 0..mu.as_slice().len() {
        let m = mu.as_slice()[i];
        let lv = log_var.as_slice()[i];
        let var = lv.exp();
        total += 0.5 * (m * m + var - 1.0 - lv);
        grad_mu.as_mut_slice()[i] = m / n;
        grad_log_var.as_mut_slice()[i] = 0.5 * (var - 1.0) / n;
    }
    KlTerm {
        value: total / n,
        grad_mu,
        grad_log_var,
    }
}

/// Mean over batch and dims of `1/(σ² + δ)`; gradient with respect to log σ².
pub fn ve_var_loss(log_var: &Matrix, delta: f64) -> TermGrad {
    let count = log_var.as_slice().len().max(1) as f64;
    let mut grad = Matrix::zeros(log_var.rows(), log_var.cols());
    let mut total = 0.0;
    for (g, lv) in grad.as_mut_slice().iter_mut().zip(log_var.as_slice()) {
        let var = lv.exp();
        let denom = var + delta;
        total += 1.0 / denom;
        // d/dlv [1/(e^lv + δ)] = -e^lv / (e^lv + δ)²
        *g = -var / (denom * denom) / count;
    }
    TermGrad {
        value: total / count,
        grad,
    }
}

/// Mean over batch and dims of `exp(|z| − τ)`; gradient with respect to `z`.
pub fn magnitude_reg_loss(z: &Matrix, tau: f64) -> TermGrad {
    let count = z.as_slice().len().max(1) as f64;
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut total = 0.0;
    for (g, v) in grad.as_mut_slice().iter_mut().zip(z.as_slice()) {
        let e = (v.abs() - tau).exp();
        total += e;
        *g = if *v > 0.0 {
            e / count
        } else if *v < 0.0 {
            -e / count
        } else {
            0.0
        };
    }
    TermGrad {
        value: total / count,
        grad,
    }
}

/// Values of every loss term of one evaluation; inactive terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub kl: f64,
    pub var: f64,
    pub reg: f64,
    pub neg_var: f64,
    pub log_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub terms: LossTerms,
    pub encoder_grads: GradientBuffer,
    pub decoder_grads: GradientBuffer,
    /// Batch mean of σ² per latent dim.
    pub mean_var: [f64; LATENT_DIM],
    pub mean_abs_z: f64,
}

/// Total objective and gradients for both networks, drawing ε from `rng`.
pub fn total_loss(
    model: &TokenizerModel,
    x: &Matrix,
    cfg: &LossConfig,
    rng: &mut RngStream,
) -> Result<LossOutput> {
    let mut eps = Matrix::zeros(x.rows(), LATENT_DIM);
    rng.fill_normal(eps.as_mut_slice());
    total_loss_with_noise(model, x, cfg, &eps)
}

/// [`total_loss`] with the reparameterization noise supplied.
pub fn total_loss_with_noise(
    model: &TokenizerModel,
    x: &Matrix,
    cfg: &LossConfig,
    eps: &Matrix,
) -> Result<LossOutput> {
    let n = x.rows();
    if eps.rows() != n || eps.cols() != LATENT_DIM {
        return Err(Error::shape(
            "total_loss noise",
            format!("{n}x{LATENT_DIM}"),
            format!("{}x{}", eps.rows(), eps.cols()),
        ));
    }
    let (enc_out, enc_tape) = model.encoder.forward_with_tape(x)?;
    let Encoded {
        mu,
        log_var,
        raw_log_var,
    } = split_encoder_output(&enc_out)?;

    // per-element standard deviation actually used for sampling
    let mut std = Matrix::zeros(n, LATENT_DIM);
    match cfg.mode {
        LossMode::FixedVar { sigma } => std.as_mut_slice().fill(sigma),
        _ => {
            for (s, lv) in std.as_mut_slice().iter_mut().zip(log_var.as_slice()) {
                *s = (0.5 * lv).exp();
            }
        }
    }
    let mut z = mu.clone();
    for ((zv, s), e) in z
        .as_mut_slice()
        .iter_mut()
        .zip(std.as_slice())
        .zip(eps.as_slice())
    {
        *zv += s * e;
    }

    let (x_hat, dec_tape) = model.decoder.forward_with_tape(&z)?;
    let rec = recon_loss(x, &x_hat, cfg.recon_norm)?;
    let (decoder_grads, mut grad_z) = model.decoder.backward(&dec_tape, &rec.grad)?;

    let mut terms = LossTerms {
        rec: rec.value,
        ..Default::default()
    };
    let mut total = rec.value;
    let mut grad_mu = Matrix::zeros(n, LATENT_DIM);
    let mut grad_lv = Matrix::zeros(n, LATENT_DIM);
    let count = (n * LATENT_DIM).max(1) as f64;

    match cfg.mode {
        LossMode::Kl { beta } => {
            let kl = kl_loss(&mu, &log_var);
            terms.kl = kl.value;
            total += beta * kl.value;
            axpy(&mut grad_mu, beta, &kl.grad_mu);
            axpy(&mut grad_lv, beta, &kl.grad_log_var);
        }
        LossMode::Ve {
            lambda1,
            lambda2,
            tau,
            delta,
        } => {
            let var = ve_var_loss(&log_var, delta);
            terms.var = var.value;
            total += lambda1 * var.value;
            axpy(&mut grad_lv, lambda1, &var.grad);
            match cfg.reg_target {
                RegTarget::Sample => {
                    let reg = magnitude_reg_loss(&z, tau);
                    terms.reg = reg.value;
                    total += lambda2 * reg.value;
                    axpy(&mut grad_z, lambda2, &reg.grad);
                }
                RegTarget::Mean => {
                    let reg = magnitude_reg_loss(&mu, tau);
                    terms.reg = reg.value;
                    total += lambda2 * reg.value;
                    axpy(&mut grad_mu, lambda2, &reg.grad);
                }
            }
        }
        LossMode::FixedVar { .. } => {}
        LossMode::CandidateNegVar { alpha } => {
            let mut v = 0.0;
            for (g, lv) in grad_lv.as_mut_slice().iter_mut().zip(log_var.as_slice()) {
                let var = lv.exp();
                v -= var;
                *g -= alpha * var / count;
            }
            terms.neg_var = v / count;
            total += alpha * terms.neg_var;
        }
        LossMode::CandidateLogEntropy { beta_log } => {
            let mut v = 0.0;
            for (g, lv) in grad_lv.as_mut_slice().iter_mut().zip(log_var.as_slice()) {
                v -= lv;
                *g -= beta_log / count;
            }
            terms.log_entropy = v / count;
            total += beta_log * terms.log_entropy;
        }
    }

    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "tokenizer loss is not finite: {terms:?}"
        )));
    }

    // chain dz into μ and (for learned variance) log σ²: dz/dlv = ½ σ ε
    axpy(&mut grad_mu, 1.0, &grad_z);
    if cfg.mode.learns_variance() {
        for (((g, gz), s), e) in grad_lv
            .as_mut_slice()
            .iter_mut()
            .zip(grad_z.as_slice())
            .zip(std.as_slice())
            .zip(eps.as_slice())
        {
            *g += gz * 0.5 * s * e;
        }
        for (g, raw) in grad_lv
            .as_mut_slice()
            .iter_mut()
            .zip(raw_log_var.as_slice())
        {
            if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(raw) {
                *g = 0.0;
            }
        }
    } else {
        grad_lv.as_mut_slice().fill(0.0);
    }
    let upstream = grad_mu.hcat(&grad_lv)?;
    let (encoder_grads, _) = model.encoder.backward(&enc_tape, &upstream)?;

    let mut mean_var = [0.0; LATENT_DIM];
    for row in std.iter_rows() {
        for (m, s) in mean_var.iter_mut().zip(row) {
            *m += s * s;
        }
    }
    mean_var.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mean_abs_z = z.as_slice().iter().map(|v| v.abs()).sum::<f64>() / count;

    Ok(LossOutput {
        total,
        terms,
        encoder_grads,
        decoder_grads,
        mean_var,
        mean_abs_z,
    })
}

fn axpy(y: &mut Matrix, a: f64, x: &Matrix) {
    for (yv, xv) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yv += a * xv;
    }
}

/// Periodic training diagnostics, written as one JSON line per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBatchStats {
    pub iter: u64,
    pub loss_total: f64,
    pub loss_rec: f64,
    pub loss_var: f64,
    pub loss_reg: f64,
    pub loss_kl: f64,
    pub loss_neg_var: f64,
    pub loss_log_entropy: f64,
    pub mean_var: [f64; LATENT_DIM],
    pub mean_abs_z: f64,
    pub lr: f64,
}

/// Joint encoder/decoder optimization on fresh mixture batches.
#[derive(Debug, Clone)]
pub struct TokenizerTrainer {
    pub model: TokenizerModel,
    enc_opt: AdamState,
    dec_opt: AdamState,
    data_rng: RngStream,
    reparam_rng: RngStream,
    sampler: MixtureSampler,
    iteration: u64,
    loss: LossConfig,
    settings: TrainSettings,
    config_hash: String,
}

impl TokenizerTrainer {
    pub fn new(
        data: &MixtureModel,
        loss: LossConfig,
        settings: TrainSettings,
        config_hash: &str,
    ) -> Result<Self> {
        loss.mode.validate()?;
        settings.validate()?;
        let mut init = RngStream::new(settings.seed, streams::INIT);
        let model = TokenizerModel::new(settings.arch, &mut init)?;
        let enc_opt = AdamState::new(
            &model.encoder,
            settings.adam,
            settings.schedule,
            settings.iterations,
        );
        let dec_opt = AdamState::new(
            &model.decoder,
            settings.adam,
            settings.schedule,
            settings.iterations,
        );
        Ok(Self {
            model,
            enc_opt,
            dec_opt,
            data_rng: RngStream::new(settings.seed, streams::DATA),
            reparam_rng: RngStream::new(settings.seed, streams::REPARAM),
            sampler: data.sampler(),
            iteration: 0,
            loss,
            settings,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// One optimizer step on a fresh batch.
    pub fn step(&mut self) -> Result<LatentBatchStats> {
        let b = self.settings.batch_size;
        let mut x = Matrix::zeros(b, 2);
        self.sampler.fill(x.as_mut_slice(), &mut self.data_rng);
        let out =
            total_loss(&self.model, &x, &self.loss, &mut self.reparam_rng).map_err(
                |e| match e {
                    Error::Numerical(what) => Error::Diverged {
                        iteration: self.iteration + 1,
                        what,
                    },
                    other => other,
                },
            )?;
        let lr = crate::nn::lr_at(
            &self.settings.schedule,
            self.enc_opt.step + 1,
            self.settings.iterations,
        );
        self.enc_opt
            .step(&mut self.model.encoder, &out.encoder_grads)?;
        self.dec_opt
            .step(&mut self.model.decoder, &out.decoder_grads)?;
        self.iteration += 1;
        Ok(LatentBatchStats {
            iter: self.iteration,
            loss_total: out.total,
            loss_rec: out.terms.rec,
            loss_var: out.terms.var,
            loss_reg: out.terms.reg,
            loss_kl: out.terms.kl,
            loss_neg_var: out.terms.neg_var,
            loss_log_entropy: out.terms.log_entropy,
            mean_var: out.mean_var,
            mean_abs_z: out.mean_abs_z,
            lr,
        })
    }

    /// Trains until the configured iteration count, reporting to `sink`.
    pub fn run<S>(&mut self, sink: &mut S) -> Result<()>
    where
        S: TrainingSink<LatentBatchStats, TokenizerTrainer> + ?Sized,
    {
        self.run_until(self.settings.iterations, sink)
    }

    /// Like [`Self::run`] but stops after iteration `limit`, checkpointing there.
    pub fn run_until<S>(&mut self, limit: u64, sink: &mut S) -> Result<()>
    where
        S: TrainingSink<LatentBatchStats, TokenizerTrainer> + ?Sized,
    {
        let limit = limit.min(self.settings.iterations);
        if self.iteration >= limit {
            return sink.checkpoint(self);
        }
        while self.iteration < limit {
            let rec = self.step()?;
            if self.settings.should_log(self.iteration) {
                sink.record(&rec)?;
            }
            if self.settings.should_checkpoint(self.iteration) || self.iteration == limit {
                sink.checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, &self.config_hash, self.iteration);
        ck.add_network("encoder", &self.model.encoder);
        ck.add_network("decoder", &self.model.decoder);
        ck.add_optimizer("encoder", &self.enc_opt);
        ck.add_optimizer("decoder", &self.dec_opt);
        ck.add_rng(&self.data_rng);
        ck.add_rng(&self.reparam_rng);
        ck.header.extra.insert(
            "loss".into(),
            serde_json::to_value(self.loss).expect("loss config serializes"),
        );
        ck.header.extra.insert(
            "settings".into(),
            serde_json::to_value(self.settings).expect("settings serialize"),
        );
        ck
    }

    /// Restores a trainer mid-run. `settings` may extend `iterations`.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        data: &MixtureModel,
        loss: LossConfig,
        settings: TrainSettings,
    ) -> Result<Self> {
        let model = TokenizerModel::from_checkpoint(ck)?;
        let enc_opt = ck.optimizer("encoder", &model.encoder)?;
        let dec_opt = ck.optimizer("decoder", &model.decoder)?;
        Ok(Self {
            enc_opt,
            dec_opt,
            data_rng: ck.rng(streams::DATA)?,
            reparam_rng: ck.rng(streams::REPARAM)?,
            sampler: data.sampler(),
            iteration: ck.header.iteration,
            loss,
            settings,
            config_hash: ck.header.config_hash.clone(),
            model,
        })
    }
}

/// Loss configuration recorded in a tokenizer checkpoint.
pub fn checkpoint_loss_config(ck: &Checkpoint) -> Result<LossConfig> {
    let v =
        ck.header.extra.get("loss").ok_or_else(|| {
            Error::InvalidArgument("tokenizer checkpoint lacks a loss config".into())
        })?;
    Ok(serde_json::from_value(v.clone())?)
}

/// Reconstruction and latent-scale diagnostics on held-out mixture samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerEval {
    /// Mean `‖x − D(μ)‖²`.
    pub recon_mse: f64,
    /// Mean `‖x − D(z)‖²` with `z` drawn as in training.
    pub recon_mse_sampled: f64,
    pub mean_var: [f64; LATENT_DIM],
    /// Average of `mean_var` over latent dims.
    pub mean_var_avg: f64,
    /// Pooled standard deviation of μ over both latent dims.
    pub latent_std: f64,
}

pub fn evaluate_tokenizer(
    model: &TokenizerModel,
    loss: &LossConfig,
    data: &MixtureModel,
    n: usize,
    seed: u64,
) -> Result<TokenizerEval> {
    let points = data.sample(n, seed);
    let x = Matrix::from_points(&points);
    let enc = model.encode(&x)?;
    let mut noise = RngStream::new(seed, streams::PROBE);
    let z = match loss.mode {
        LossMode::FixedVar { sigma } => {
            let lv = Matrix::from_vec(n, LATENT_DIM, vec![(sigma * sigma).ln(); n * LATENT_DIM])?;
            reparameterize(&enc.mu, &lv, &mut noise)?.0
        }
        _ => reparameterize(&enc.mu, &enc.log_var, &mut noise)?.0,
    };
    let recon_mse = recon_loss(&x, &model.decode(&enc.mu)?, ReconNorm::SquaredL2)?.value;
    let recon_mse_sampled = recon_loss(&x, &model.decode(&z)?, ReconNorm::SquaredL2)?.value;
    let mut mean_var = [0.0; LATENT_DIM];
    match loss.mode {
        LossMode::FixedVar { sigma } => mean_var = [sigma * sigma; LATENT_DIM],
        _ => {
            for row in enc.log_var.iter_rows() {
                for (m, lv) in mean_var.iter_mut().zip(row) {
                    *m += lv.exp();
                }
            }
            mean_var.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        }
    }
    let stds = enc.mu.column_stds();
    let latent_std = (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt();
    Ok(TokenizerEval {
        recon_mse,
        recon_mse_sampled,
        mean_var,
        mean_var_avg: mean_var.iter().sum::<f64>() / LATENT_DIM as f64,
        latent_std,
    })
}
