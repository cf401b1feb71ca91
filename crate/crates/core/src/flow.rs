//! Flow matching over tokenizer latents: linear paths `z_t = (1−t)z₀ + t·x`,
//! velocity regression onto `x − z₀`, and an explicit Euler sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::decoder::LatentDecoder;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixture::{MixtureModel, MixtureSampler};
use crate::nn::{AdamState, GradientBuffer, MlpNetwork};
use crate::rng::{streams, RngStream};
use crate::tokenizer::{LossConfig, LossMode, TokenizerModel};
use crate::train::{ArchSpec, TrainSettings, TrainingSink};

pub const CHECKPOINT_KIND: &str = "flow";

/// Rows per sampler work unit. Fixed so results do not depend on thread count.
const SAMPLE_CHUNK: usize = 2048;

/// `v_θ(z, t)` as an MLP on `[z, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    pub net: MlpNetwork,
}

impl FlowNetwork {
    pub fn new(arch: ArchSpec, latent_dim: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            net: MlpNetwork::new(arch.mlp(latent_dim + 1, latent_dim), rng)?,
        })
    }

    pub fn from_network(net: MlpNetwork) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 1 {
            return Err(Error::shape(
                "FlowNetwork",
                format!("input_dim = output_dim + 1 ({})", net.output_dim() + 1),
                net.input_dim(),
            ));
        }
        Ok(Self { net })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                ck.header.kind
            )));
        }
        Self::from_network(ck.network("flow")?)
    }
}

/// Something the Euler sampler can integrate.
pub trait VelocityField: Sync {
    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix>;
}

impl VelocityField for FlowNetwork {
    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        let d = self.latent_dim();
        if z.cols() != d {
            return Err(Error::shape("FlowNetwork::velocity", d, z.cols()));
        }
        let mut input = Matrix::zeros(z.rows(), d + 1);
        for (dst, src) in input
            .as_mut_slice()
            .chunks_exact_mut(d + 1)
            .zip(z.iter_rows())
        {
            dst[..d].copy_from_slice(src);
            dst[d] = t;
        }
        self.net.forward(&input, None)
    }
}

/// Adapts a closure `(z, t) -> v` for one point.
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64) -> [f64; 2] + Sync,
{
    fn velocity(&self, z: &Matrix, t: f64) -> Result<Matrix> {
        if z.cols() != 2 {
            return Err(Error::shape("FnField", 2, z.cols()));
        }
        let mut out = Matrix::zeros(z.rows(), 2);
        for (o, r) in out.as_mut_slice().chunks_exact_mut(2).zip(z.iter_rows()) {
            o.copy_from_slice(&(self.0)(r, t));
        }
        Ok(out)
    }
}

/// One training tuple on the linear path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPathSample {
    pub z0: [f64; 2],
    pub x: [f64; 2],
    pub t: f64,
    pub zt: [f64; 2],
    pub target_v: [f64; 2],
}

impl FlowPathSample {
    pub fn new(x: [f64; 2], z0: [f64; 2], t: f64) -> Result<Self> {
        let (zt, target_v) = flow_target(x, z0, t)?;
        Ok(Self {
            z0,
            x,
            t,
            zt,
            target_v,
        })
    }
}

/// Interpolant at `t` and the constant conditional velocity `x − z₀`.
pub fn flow_target(x: [f64; 2], z0: [f64; 2], t: f64) -> Result<([f64; 2], [f64; 2])> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "flow time must lie in [0, 1], got {t}"
        )));
    }
    let mut zt = [0.0; 2];
    let mut v = [0.0; 2];
    for i in 0..2 {
        zt[i] = (1.0 - t) * z0[i] + t * x[i];
        v[i] = x[i] - z0[i];
    }
    Ok((zt, v))
}

/// Mean of `‖v_θ(z_t, t) − (x − z₀)‖²` over the batch, with parameter gradients.
pub fn flow_loss(flow: &FlowNetwork, batch: &[FlowPathSample]) -> Result<(f64, GradientBuffer)> {
    if flow.latent_dim() != 2 {
        return Err(Error::shape("flow_loss latent dim", 2, flow.latent_dim()));
    }
    let mut input = Matrix::zeros(batch.len(), 3);
    let mut target = Matrix::zeros(batch.len(), 2);
    for (i, s) in batch.iter().enumerate() {
        input.row_mut(i).copy_from_slice(&[s.zt[0], s.zt[1], s.t]);
        target.row_mut(i).copy_from_slice(&s.target_v);
    }
    flow_loss_matrices(flow, &input, &target)
}

/// [`flow_loss`] on a prebuilt `[z_t, t]` input and target matrix.
pub fn flow_loss_matrices(
    flow: &FlowNetwork,
    input: &Matrix,
    target: &Matrix,
) -> Result<(f64, GradientBuffer)> {
    let (pred, tape) = flow.net.forward_with_tape(input)?;
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::shape(
            "flow_loss target",
            format!("{}x{}", pred.rows(), pred.cols()),
            format!("{}x{}", target.rows(), target.cols()),
        ));
    }
    let n = pred.rows().max(1) as f64;
    let mut upstream = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for ((g, p), y) in upstream
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - y;
        total += d * d;
        *g = 2.0 * d / n;
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "flow loss is not finite ({loss})"
        )));
    }
    let (grads, _) = flow.net.backward(&tape, &upstream)?;
    Ok((loss, grads))
}

/// Which tokenizer latent the flow is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentChoice {
    /// `z = μ + σ ε`.
    Sample,
    /// `μ`.
    Mean,
}

impl LatentChoice {
    pub fn default_for(mode: &LossMode) -> Self {
        if mode.learns_variance() {
            LatentChoice::Sample
        } else {
            LatentChoice::Mean
        }
    }
}

/// Maps data batches to flow-training latents.
#[derive(Debug, Clone)]
pub enum LatentSource {
    /// Identity tokenizer: the flow models data directly.
    Raw,
    Tokenizer {
        model: TokenizerModel,
        choice: LatentChoice,
        /// Sampling scale for fixed-variance tokenizers.
        fixed_sigma: Option<f64>,
    },
}

impl LatentSource {
    pub fn tokenizer(
        model: TokenizerModel,
        loss: &LossConfig,
        choice: Option<LatentChoice>,
    ) -> Self {
        let fixed_sigma = match loss.mode {
            LossMode::FixedVar { sigma } => Some(sigma),
            _ => None,
        };
        LatentSource::Tokenizer {
            model,
            choice: choice.unwrap_or_else(|| LatentChoice::default_for(&loss.mode)),
            fixed_sigma,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LatentSource::Raw => "raw",
            LatentSource::Tokenizer {
                choice: LatentChoice::Sample,
                ..
            } => "tokenizer-sample",
            LatentSource::Tokenizer {
                choice: LatentChoice::Mean,
                ..
            } => "tokenizer-mean",
        }
    }

    pub fn latents(&self, x: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
        match self {
            LatentSource::Raw => Ok(x.clone()),
            LatentSource::Tokenizer {
                model,
                choice,
                fixed_sigma,
            } => {
                let enc = model.encode(x)?;
                match choice {
                    LatentChoice::Mean => Ok(enc.mu),
                    LatentChoice::Sample => {
                        let mut z = enc.mu;
                        for (zv, lv) in z.as_mut_slice().iter_mut().zip(enc.log_var.as_slice()) {
                            let s = fixed_sigma.unwrap_or_else(|| (0.5 * lv).exp());
                            *zv += s * rng.normal();
                        }
                        Ok(z)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrainer {
    pub flow: FlowNetwork,
    opt: AdamState,
    data_rng: RngStream,
    time_rng: RngStream,
    noise_rng: RngStream,
    latent_rng: RngStream,
    sampler: MixtureSampler,
    source: LatentSource,
    iteration: u64,
    settings: TrainSettings,
    config_hash: String,
}

impl FlowTrainer {
    pub fn new(
        data: &MixtureModel,
        source: LatentSource,
        settings: TrainSettings,
        config_hash: &str,
    ) -> Result<Self> {
        settings.validate()?;
        let mut init = RngStream::new(settings.seed, streams::INIT).substream("flow");
        let flow = FlowNetwork::new(settings.arch, 2, &mut init)?;
        let opt = AdamState::new(
            &flow.net,
            settings.adam,
            settings.schedule,
            settings.iterations,
        );
        Ok(Self {
            flow,
            opt,
            data_rng: Self::data_stream(settings.seed),
            time_rng: RngStream::new(settings.seed, streams::FLOW_TIME),
            noise_rng: Self::noise_stream(settings.seed),
            latent_rng: Self::latent_stream(settings.seed),
            sampler: data.sampler(),
            source,
            iteration: 0,
            settings,
            config_hash: config_hash.to_string(),
        })
    }

    fn data_stream(seed: u64) -> RngStream {
        RngStream::new(seed, streams::DATA).substream("flow")
    }

    fn noise_stream(seed: u64) -> RngStream {
        RngStream::new(seed, streams::BASE_NOISE).substream("train")
    }

    fn latent_stream(seed: u64) -> RngStream {
        RngStream::new(seed, streams::REPARAM).substream("flow")
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn source(&self) -> &LatentSource {
        &self.source
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn step(&mut self) -> Result<FlowRecord> {
        let b = self.settings.batch_size;
        let mut x = Matrix::zeros(b, 2);
        self.sampler.fill(x.as_mut_slice(), &mut self.data_rng);
        let lat = self.source.latents(&x, &mut self.latent_rng)?;
        let mut input = Matrix::zeros(b, 3);
        let mut target = Matrix::zeros(b, 2);
        for i in 0..b {
            let z0 = [self.noise_rng.normal(), self.noise_rng.normal()];
            let t = self.time_rng.uniform();
            let xl = [lat.get(i, 0), lat.get(i, 1)];
            let (zt, v) = flow_target(xl, z0, t)?;
            input.row_mut(i).copy_from_slice(&[zt[0], zt[1], t]);
            target.row_mut(i).copy_from_slice(&v);
        }
        let (loss, grads) =
            flow_loss_matrices(&self.flow, &input, &target).map_err(|e| match e {
                Error::Numerical(what) => Error::Diverged {
                    iteration: self.iteration + 1,
                    what,
                },
                other => other,
            })?;
        let lr = crate::nn::lr_at(
            &self.settings.schedule,
            self.opt.step + 1,
            self.settings.iterations,
        );
        self.opt.step(&mut self.flow.net, &grads)?;
        self.iteration += 1;
        Ok(FlowRecord {
            iter: self.iteration,
            loss,
            lr,
        })
    }

    /// Trains until the configured iteration count, reporting to `sink`.
    pub fn run<S>(&mut self, sink: &mut S) -> Result<()>
    where
        S: TrainingSink<FlowRecord, FlowTrainer> + ?Sized,
    {
        self.run_until(self.settings.iterations, sink)
    }

    /// Like [`Self::run`] but stops after iteration `limit`, checkpointing there.
    pub fn run_until<S>(&mut self, limit: u64, sink: &mut S) -> Result<()>
    where
        S: TrainingSink<FlowRecord, FlowTrainer> + ?Sized,
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
        ck.add_network("flow", &self.flow.net);
        ck.add_optimizer("flow", &self.opt);
        for r in [
            &self.data_rng,
            &self.time_rng,
            &self.noise_rng,
            &self.latent_rng,
        ] {
            ck.add_rng(r);
        }
        ck.header.extra.insert(
            "latent_source".into(),
            serde_json::Value::from(self.source.label()),
        );
        ck.header.extra.insert(
            "settings".into(),
            serde_json::to_value(self.settings).expect("settings serialize"),
        );
        ck
    }

    pub fn from_checkpoint(
        ck: &Checkpoint,
        data: &MixtureModel,
        source: LatentSource,
        settings: TrainSettings,
    ) -> Result<Self> {
        let flow = FlowNetwork::from_checkpoint(ck)?;
        let opt = ck.optimizer("flow", &flow.net)?;
        let seed = settings.seed;
        Ok(Self {
            opt,
            data_rng: ck.rng(Self::data_stream(seed).name())?,
            time_rng: ck.rng(streams::FLOW_TIME)?,
            noise_rng: ck.rng(Self::noise_stream(seed).name())?,
            latent_rng: ck.rng(Self::latent_stream(seed).name())?,
            sampler: data.sampler(),
            source,
            iteration: ck.header.iteration,
            settings,
            config_hash: ck.header.config_hash.clone(),
            flow,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 20 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// `z_{k+1} = z_k + Δt·v(z_k, t_k)` with `t_k = k/N`, applied to every row.
pub fn euler_integrate<F: VelocityField + ?Sized>(
    field: &F,
    z0: &Matrix,
    cfg: SamplerConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let n = cfg.steps;
    let dt = 1.0 / n as f64;
    let cols = z0.cols();
    if z0.rows() == 0 {
        return Ok(z0.clone());
    }
    let chunks: Vec<Result<Vec<f64>>> = z0
        .as_slice()
        .par_chunks(SAMPLE_CHUNK * cols)
        .map(|chunk| {
            let mut z = Matrix::from_vec(chunk.len() / cols, cols, chunk.to_vec())?;
            for k in 0..n {
                let t = k as f64 / n as f64;
                let v = field.velocity(&z, t)?;
                if v.rows() != z.rows() || v.cols() != cols {
                    return Err(Error::shape("velocity field output", cols, v.cols()));
                }
                for (zv, vv) in z.as_mut_slice().iter_mut().zip(v.as_slice()) {
                    *zv += dt * vv;
                }
            }
            Ok(z.into_vec())
        })
        .collect();
    let mut out = Vec::with_capacity(z0.as_slice().len());
    for c in chunks {
        out.extend(c?);
    }
    Matrix::from_vec(z0.rows(), cols, out)
}

/// Draws `n` base points from `rng` and integrates them to `t = 1`.
pub fn euler_sample<F: VelocityField + ?Sized>(
    field: &F,
    n: usize,
    cfg: SamplerConfig,
    rng: &mut RngStream,
) -> Result<Matrix> {
    let mut z0 = Matrix::zeros(n, 2);
    rng.fill_normal(z0.as_mut_slice());
    euler_integrate(field, &z0, cfg)
}

/// Decoded Euler samples.
pub fn generate<D, F>(
    decoder: &D,
    field: &F,
    n: usize,
    cfg: SamplerConfig,
    rng: &mut RngStream,
) -> Result<Vec<[f64; 2]>>
where
    D: LatentDecoder + ?Sized,
    F: VelocityField + ?Sized,
{
    if n == 0 {
        cfg.validate()?;
        return Ok(Vec::new());
    }
    let latents = euler_sample(field, n, cfg, rng)?;
    Ok(decoder.decode(&latents)?.to_points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::IdentityDecoder;

    #[test]
    fn path_examples() {
        let (zt, v) = flow_target([1.0, 1.0], [0.0, 0.0], 0.5).unwrap();
        assert_eq!((zt, v), ([0.5, 0.5], [1.0, 1.0]));
        let (zt, v) = flow_target([0.3, -0.2], [0.3, -0.2], 0.7).unwrap();
        assert_eq!(v, [0.0, 0.0]);
        assert!((zt[0] - 0.3).abs() < 1e-16 && (zt[1] + 0.2).abs() < 1e-16);
        assert_eq!(
            flow_target([2.0, 3.0], [-1.0, 4.0], 0.0).unwrap().0,
            [-1.0, 4.0]
        );
        assert_eq!(
            flow_target([2.0, 3.0], [-1.0, 4.0], 1.0).unwrap().0,
            [2.0, 3.0]
        );
        assert!(flow_target([0.0; 2], [0.0; 2], 1.5).is_err());
        assert!(flow_target([0.0; 2], [0.0; 2], -0.1).is_err());
    }

    #[test]
    fn zero_network_loss_is_mean_target_norm() {
        let flow = FlowNetwork::from_network(
            MlpNetwork::zeros(
                ArchSpec {
                    depth: 2,
                    hidden: 4,
                }
                .mlp(3, 2),
            )
            .unwrap(),
        )
        .unwrap();
        let batch = [
            FlowPathSample::new([1.0, 0.0], [0.0, 0.0], 0.2).unwrap(),
            FlowPathSample::new([0.0, 2.0], [0.0, -1.0], 0.9).unwrap(),
        ];
        let (loss, _) = flow_loss(&flow, &batch).unwrap();
        assert_eq!(loss, (1.0 + 9.0) / 2.0);
    }

    #[test]
    fn constant_field_moves_by_c() {
        let c = [0.25, -1.5];
        let field = FnField(move |_: &[f64], _| c);
        let z0 = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]);
        for steps in [1, 3, 20, 64] {
            let z = euler_integrate(&field, &z0, SamplerConfig { steps }).unwrap();
            for (r0, r) in z0.iter_rows().zip(z.iter_rows()) {
                assert!((r[0] - r0[0] - c[0]).abs() < 1e-12 && (r[1] - r0[1] - c[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contracting_field_matches_product_formula() {
        let field = FnField(|z: &[f64], _| [-z[0], -z[1]]);
        let z0 = Matrix::from_rows(&[[1.0, -2.0]]);
        let z = euler_integrate(&field, &z0, SamplerConfig { steps: 20 }).unwrap();
        let f = 0.95f64.powi(20);
        assert!((f - 0.3585).abs() < 1e-4);
        assert!((z.get(0, 0) - f).abs() < 1e-14 && (z.get(0, 1) + 2.0 * f).abs() < 1e-14);
    }

    #[test]
    fn single_step_is_one_velocity_evaluation() {
        let field = FnField(|z: &[f64], t| [z[1] + t, 3.0]);
        let z0 = Matrix::from_rows(&[[1.0, 2.0]]);
        let z = euler_integrate(&field, &z0, SamplerConfig { steps: 1 }).unwrap();
        assert_eq!(z.row(0), &[3.0, 5.0]);
    }

    #[test]
    fn generate_empty_and_zero_steps() {
        let field = FnField(|_: &[f64], _| [0.0, 0.0]);
        let mut rng = RngStream::new(0, streams::BASE_NOISE);
        assert!(generate(
            &IdentityDecoder,
            &field,
            0,
            SamplerConfig::default(),
            &mut rng
        )
        .unwrap()
        .is_empty());
        assert!(euler_sample(&field, 4, SamplerConfig { steps: 0 }, &mut rng).is_err());
    }

    #[test]
    fn chunked_sampling_matches_single_pass() {
        let mut init = RngStream::new(5, streams::INIT);
        let flow = FlowNetwork::new(
            ArchSpec {
                depth: 3,
                hidden: 16,
            },
            2,
            &mut init,
        )
        .unwrap();
        let n = SAMPLE_CHUNK * 2 + 17;
        let mut z0 = Matrix::zeros(n, 2);
        RngStream::new(1, streams::BASE_NOISE).fill_normal(z0.as_mut_slice());
        let all = euler_integrate(&flow, &z0, SamplerConfig { steps: 4 }).unwrap();
        let last = Matrix::from_vec(17, 2, z0.as_slice()[2 * SAMPLE_CHUNK * 2..].to_vec()).unwrap();
        let tail = euler_integrate(&flow, &last, SamplerConfig { steps: 4 }).unwrap();
        assert_eq!(&all.as_slice()[2 * SAMPLE_CHUNK * 2..], tail.as_slice());
    }
}
