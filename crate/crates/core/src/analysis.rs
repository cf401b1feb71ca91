//! Numerical probes of decoder sensitivity, variance equilibrium and latent
//! robustness, plus generation metrics against the mixture oracle.
//!
//! Jacobians are `J[i][j] = ∂D_i/∂z_j`, estimated by central differences.
//! The reconstruction target for frozen-decoder probes is `D(μ)` itself.

use serde::{Deserialize, Serialize};

use crate::decoder::LatentDecoder;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixture::{mean_nll, MixtureModel, NoisyMixture};
use crate::rng::{streams, RngStream};
use crate::tokenizer::TokenizerModel;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const VALIDITY_SAMPLES: usize = 1_000_000;
pub const VALIDITY_PERCENTILE: f64 = 0.01;
pub const HIST_BINS: usize = 64;
pub const HIST_RANGE: f64 = 3.0;
pub const HIST_SMOOTHING: f64 = 1e-9;

pub type Jacobian = [[f64; 2]; 2];

/// Central-difference Jacobian of `decoder` at `mu`.
pub fn decoder_jacobian<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    h: f64,
) -> Result<Jacobian> {
    Ok(decoder_jacobians(decoder, &[mu], h)?[0])
}

/// Batched [`decoder_jacobian`]: one decoder call over `4·len` points.
pub fn decoder_jacobians<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mus: &[[f64; 2]],
    h: f64,
) -> Result<Vec<Jacobian>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let mut z = Matrix::zeros(4 * mus.len(), 2);
    for (k, mu) in mus.iter().enumerate() {
        for j in 0..2 {
            let mut plus = *mu;
            let mut minus = *mu;
            plus[j] += h;
            minus[j] -= h;
            z.row_mut(4 * k + 2 * j).copy_from_slice(&plus);
            z.row_mut(4 * k + 2 * j + 1).copy_from_slice(&minus);
        }
    }
    let out = decoder.decode(&z)?;
    if out.cols() != 2 {
        return Err(Error::shape("decoder output", 2, out.cols()));
    }
    Ok((0..mus.len())
        .map(|k| {
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let p = out.row(4 * k + 2 * j);
                let m = out.row(4 * k + 2 * j + 1);
                for i in 0..2 {
                    jac[i][j] = (p[i] - m[i]) / (2.0 * h);
                }
            }
            jac
        })
        .collect())
}

/// `Tr(J Jᵀ)`, the squared Frobenius norm.
pub fn sensitivity_t(j: &Jacobian) -> f64 {
    j.iter().flatten().map(|v| v * v).sum()
}

/// Whether the Jacobian at `h` and `h/10` agree to `rel_tol` (max-entry relative).
pub fn jacobian_is_smooth<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    h: f64,
    rel_tol: f64,
) -> Result<bool> {
    let a = decoder_jacobian(decoder, mu, h)?;
    let b = decoder_jacobian(decoder, mu, h / 10.0)?;
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let diff = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(diff / scale <= rel_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEq {
    /// `(λ₁/T)^{1/4}`, or `+∞` when `T = 0`.
    pub sigma: f64,
    pub defined: bool,
}

pub fn predicted_sigma_eq(t: f64, lambda1: f64) -> Result<SigmaEq> {
    if !(t >= 0.0 && t.is_finite()) || !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma_eq needs T >= 0 and lambda1 > 0, got T={t}, lambda1={lambda1}"
        )));
    }
    if t == 0.0 {
        return Ok(SigmaEq {
            sigma: f64::INFINITY,
            defined: false,
        });
    }
    Ok(SigmaEq {
        sigma: (lambda1 / t).powf(0.25),
        defined: true,
    })
}

/// Minimizer over `s = σ²` of `s·T + λ₁/(s + δ)`.
pub fn surrogate_minimizer(t: f64, lambda1: f64, delta: f64) -> f64 {
    (lambda1 / t).sqrt() - delta
}

/// `ε` rows in antithetic pairs `(ε, −ε)`; `mc` is rounded up to even.
pub fn antithetic_normals(mc: usize, rng: &mut RngStream) -> Matrix {
    let half = mc.div_ceil(2);
    let mut eps = Matrix::zeros(2 * half, 2);
    for k in 0..half {
        let e = [rng.normal(), rng.normal()];
        eps.row_mut(2 * k).copy_from_slice(&e);
        eps.row_mut(2 * k + 1).copy_from_slice(&[-e[0], -e[1]]);
    }
    eps
}

/// Per-row `‖D(μ + σ ε_i) − D(μ)‖²`.
fn inflation_samples<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    sigma: f64,
    eps: &Matrix,
) -> Result<Vec<f64>> {
    let mut z = Matrix::zeros(eps.rows() + 1, 2);
    z.row_mut(0).copy_from_slice(&mu);
    for (i, e) in eps.iter_rows().enumerate() {
        z.row_mut(i + 1)
            .copy_from_slice(&[mu[0] + sigma * e[0], mu[1] + sigma * e[1]]);
    }
    let out = decoder.decode(&z)?;
    let base = [out.get(0, 0), out.get(0, 1)];
    Ok((1..out.rows())
        .map(|r| {
            let d0 = out.get(r, 0) - base[0];
            let d1 = out.get(r, 1) - base[1];
            d0 * d0 + d1 * d1
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorConfig {
    pub sigmas: Vec<f64>,
    pub mc: usize,
    pub h: f64,
    /// Standard error of the slope, relative to `T`, above which the result is flagged.
    pub max_rel_se: f64,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![1e-3, 3e-3, 1e-2],
            mc: 100_000,
            h: DEFAULT_FD_STEP,
            max_rel_se: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorSlope {
    pub mu: [f64; 2],
    /// Through-origin regression slope of mean inflation on σ².
    pub slope: f64,
    pub slope_se: f64,
    pub t: f64,
    pub rel_deviation: f64,
    /// `(σ, mean ‖D(μ+σε) − D(μ)‖²)`.
    pub inflation: Vec<(f64, f64)>,
    pub insufficient_mc: bool,
}

/// Monte-Carlo check that reconstruction inflation grows like `σ²·T(μ)`.
pub fn taylor_slope_check<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    cfg: &TaylorConfig,
    rng: &mut RngStream,
) -> Result<TaylorSlope> {
    if cfg.sigmas.is_empty() || cfg.mc < 2 || cfg.sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument(
            "taylor check needs positive sigmas and mc >= 2".into(),
        ));
    }
    let t = sensitivity_t(&decoder_jacobian(decoder, mu, cfg.h)?);
    let eps = antithetic_normals(cfg.mc, rng);
    let m = eps.rows();
    let s4: f64 = cfg.sigmas.iter().map(|s| s.powi(4)).sum();
    // slope = mean_i g_i with g_i = Σ_σ σ² f_i(σ) / Σ σ⁴
    let mut g = vec![0.0; m];
    let mut inflation = Vec::with_capacity(cfg.sigmas.len());
    for &s in &cfg.sigmas {
        let f = inflation_samples(decoder, mu, s, &eps)?;
        inflation.push((s, f.iter().sum::<f64>() / m as f64));
        for (gi, fi) in g.iter_mut().zip(&f) {
            *gi += s * s * fi / s4;
        }
    }
    // antithetic partners are not independent; the standard error uses pair means
    let pairs: Vec<f64> = g.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let slope = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let var = pairs.iter().map(|p| (p - slope) * (p - slope)).sum::<f64>()
        / (pairs.len() - 1).max(1) as f64;
    let slope_se = (var / pairs.len() as f64).sqrt();
    let rel_deviation = if t > 0.0 {
        (slope - t).abs() / t
    } else {
        slope.abs()
    };
    Ok(TaylorSlope {
        mu,
        slope,
        slope_se,
        t,
        rel_deviation,
        inflation,
        insufficient_mc: t > 0.0 && slope_se / t > cfg.max_rel_se,
    })
}

/// `|mean ‖D(μ+σε) − D(μ)‖² − σ² mean ‖Jε‖²|` over the supplied noise.
///
/// With antithetic `ε` the odd-order terms cancel, leaving the `O(σ⁴)` remainder.
pub fn taylor_remainder<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    sigma: f64,
    eps: &Matrix,
    h: f64,
) -> Result<f64> {
    let j = decoder_jacobian(decoder, mu, h)?;
    let f = inflation_samples(decoder, mu, sigma, eps)?;
    let mut dev = 0.0;
    for (fi, e) in f.iter().zip(eps.iter_rows()) {
        let je0 = j[0][0] * e[0] + j[0][1] * e[1];
        let je1 = j[1][0] * e[0] + j[1][1] * e[1];
        dev += fi - sigma * sigma * (je0 * je0 + je1 * je1);
    }
    Ok((dev / f.len() as f64).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EquilibriumMode {
    /// `σ² T̂ + λ₁/(σ² + δ)` with `T̂` from the FD Jacobian.
    Surrogate,
    /// Sample-average reconstruction inflation over `mc` fixed draws plus `λ₁/(σ² + δ)`.
    MonteCarlo { mc: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    pub lambda1: f64,
    pub delta: f64,
    pub mode: EquilibriumMode,
    pub max_iters: usize,
    /// Convergence threshold on `|∂f/∂ log σ²|`, relative to `λ₁`.
    pub grad_tol: f64,
    pub init_log_var: f64,
    pub h: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            delta: 1e-8,
            mode: EquilibriumMode::Surrogate,
            max_iters: 10_000,
            grad_tol: 1e-10,
            init_log_var: 0.0,
            h: DEFAULT_FD_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub learned_sigma: f64,
    pub predicted_sigma: f64,
    pub ratio: f64,
    pub t_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

type ScalarFn<'a> = Box<dyn Fn(f64) -> Result<f64> + 'a>;

/// Gradient descent on a scalar `log σ²` against a frozen decoder at `mu`.
pub fn equilibrium_check<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mu: [f64; 2],
    cfg: &EquilibriumConfig,
    rng: &mut RngStream,
) -> Result<EquilibriumResult> {
    if !(cfg.lambda1 > 0.0) || !(cfg.delta > 0.0) {
        return Err(Error::InvalidArgument(
            "equilibrium check needs lambda1 > 0 and delta > 0".into(),
        ));
    }
    let t_hat = sensitivity_t(&decoder_jacobian(decoder, mu, cfg.h)?);
    let (lambda1, delta) = (cfg.lambda1, cfg.delta);
    let var_term = |s: f64| lambda1 / (s.exp() + delta);
    let var_grad = |s: f64| -lambda1 * s.exp() / (s.exp() + delta).powi(2);

    let (objective, gradient): (ScalarFn<'_>, ScalarFn<'_>) = match cfg.mode {
        EquilibriumMode::Surrogate => (
            Box::new(move |s: f64| Ok(s.exp() * t_hat + var_term(s))),
            Box::new(move |s: f64| Ok(s.exp() * t_hat + var_grad(s))),
        ),
        EquilibriumMode::MonteCarlo { mc } => {
            let eps = antithetic_normals(mc.max(2), rng);
            let rec = move |s: f64| -> Result<f64> {
                let f = inflation_samples(decoder, mu, (0.5 * s).exp(), &eps)?;
                Ok(f.iter().sum::<f64>() / f.len() as f64)
            };
            let rec = std::rc::Rc::new(rec);
            let r1 = rec.clone();
            (
                Box::new(move |s: f64| Ok(r1(s)? + var_term(s))),
                Box::new(move |s: f64| {
                    let ds = 1e-5;
                    Ok((rec(s + ds)? - rec(s - ds)?) / (2.0 * ds) + var_grad(s))
                }),
            )
        }
    };

    let mut s = cfg.init_log_var;
    let mut f = objective(s)?;
    let mut step = 1.0 / lambda1.max(t_hat).max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    let mut prev: Option<(f64, f64)> = None;
    // a finite-difference gradient of a sample average is only good to a few ulps of f over ds
    let tol = match cfg.mode {
        EquilibriumMode::Surrogate => cfg.grad_tol * lambda1,
        EquilibriumMode::MonteCarlo { .. } => (cfg.grad_tol * lambda1).max(1e-9 * f.abs()),
    };
    // ReLU decoders make the MC objective piecewise smooth; at a kink the
    // gradient never vanishes, so a run of negligible moves also counts
    let mut stalled = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let g = gradient(s)?;
        log::trace!(
            "equilibrium it {it}: s {s:.12} f {f:.15e} g {g:.3e} tol {tol:.3e} step {step:.3e}"
        );
        if g.abs() <= tol {
            converged = true;
            break;
        }
        // Barzilai-Borwein trial step, then Armijo backtracking
        let mut trial = match prev {
            Some((ps, pg)) if (g - pg) * (s - ps) > 0.0 => (s - ps) / (g - pg),
            _ => step * 2.0,
        };
        prev = Some((s, g));
        let mut accepted = false;
        for _ in 0..80 {
            let cand = s - trial * g;
            let fc = objective(cand)?;
            // near the optimum the decrease drops below rounding; then require a smaller gradient
            let flat = fc <= f + 4.0 * f64::EPSILON * f.abs() && gradient(cand)?.abs() < g.abs();
            if fc <= f - 1e-4 * trial * g * g || flat {
                let moved = (cand - s).abs();
                stalled = if moved <= 1e-10 * s.abs().max(1.0) {
                    stalled + 1
                } else {
                    0
                };
                s = cand;
                f = fc;
                step = trial;
                accepted = true;
                break;
            }
            trial *= 0.5;
        }
        if !accepted {
            converged = g.abs() <= 1e3 * tol;
            break;
        }
        if stalled >= 3 && matches!(cfg.mode, EquilibriumMode::MonteCarlo { .. }) {
            converged = true;
            break;
        }
    }
    let learned_sigma = (0.5 * s).exp();
    let predicted = predicted_sigma_eq(t_hat, lambda1)?;
    Ok(EquilibriumResult {
        learned_sigma,
        predicted_sigma: predicted.sigma,
        ratio: learned_sigma / predicted.sigma,
        t_hat,
        iterations,
        converged,
    })
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// On-manifold test: clean log-density at or above a fixed percentile of oracle samples.
#[derive(Debug, Clone)]
pub struct ValidityOracle {
    pub log_threshold: f64,
    density: NoisyMixture,
}

impl ValidityOracle {
    /// Threshold from `n` oracle samples at the given lower percentile.
    pub fn new(m: &MixtureModel, n: usize, percentile: f64, seed: u64) -> Result<Self> {
        if n == 0 || !(0.0..1.0).contains(&percentile) {
            return Err(Error::InvalidArgument(
                "validity threshold needs n > 0 and percentile in [0,1)".into(),
            ));
        }
        let density = m.at_noise(0.0)?;
        let mut rng = RngStream::new(seed, streams::PROBE).substream("validity");
        let points = m.sampler().sample(n, &mut rng);
        let mut ld = density.log_density_batch(&points);
        ld.sort_by(f64::total_cmp);
        let idx = ((percentile * n as f64).floor() as usize).min(n - 1);
        Ok(Self {
            log_threshold: ld[idx],
            density,
        })
    }

    pub fn with_threshold(m: &MixtureModel, log_threshold: f64) -> Result<Self> {
        Ok(Self {
            log_threshold,
            density: m.at_noise(0.0)?,
        })
    }

    pub fn is_valid(&self, p: [f64; 2]) -> bool {
        self.density.log_density(p) >= self.log_threshold
    }

    pub fn valid_fraction(&self, points: &[[f64; 2]]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let ld = self.density.log_density_batch(points);
        ld.iter().filter(|v| **v >= self.log_threshold).count() as f64 / points.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// Perturbation scale as a multiple of the model's latent std.
    pub rho: f64,
    pub abs_scale: f64,
    pub mean_nll: f64,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub schema_version: u32,
    pub latent_std: f64,
    pub n: usize,
    pub baseline: RobustnessRow,
    pub rows: Vec<RobustnessRow>,
}

/// Decodes `μ + ρ·s·ε` for each `ρ`, where `s` is the pooled std of `μ` and `ε` is shared across `ρ`.
pub fn robustness_probe(
    model: &TokenizerModel,
    m: &MixtureModel,
    oracle: &ValidityOracle,
    rhos: &[f64],
    n: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "robustness probe needs n > 0".into(),
        ));
    }
    if rhos.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidArgument(
            "perturbation scales must be >= 0".into(),
        ));
    }
    let x = Matrix::from_points(&m.sample(n, seed));
    let mu = model.encode(&x)?.mu;
    let stds = mu.column_stds();
    let latent_std = (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt();
    let mut eps = Matrix::zeros(n, 2);
    RngStream::new(seed, streams::PROBE).fill_normal(eps.as_mut_slice());

    let row_for = |rho: f64, z: &Matrix| -> Result<RobustnessRow> {
        let pts = model.decoder.forward(z, None)?.to_points();
        Ok(RobustnessRow {
            rho,
            abs_scale: rho * latent_std,
            mean_nll: mean_nll(m, &pts)?,
            valid_fraction: oracle.valid_fraction(&pts),
        })
    };
    let baseline = row_for(0.0, &mu)?;
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let scale = rho * latent_std;
        let mut z = mu.clone();
        for (zv, e) in z.as_mut_slice().iter_mut().zip(eps.as_slice()) {
            *zv += scale * e;
        }
        rows.push(row_for(rho, &z)?);
    }
    Ok(RobustnessReport {
        schema_version: SCHEMA_VERSION,
        latent_std,
        n,
        baseline,
        rows,
    })
}

/// Normalized, smoothed `HIST_BINS²` histogram over `[−HIST_RANGE, HIST_RANGE]²`.
/// Points outside the window are counted in the nearest edge bin.
pub fn histogram2d(points: &[[f64; 2]]) -> Vec<f64> {
    let mut h = vec![0.0; HIST_BINS * HIST_BINS];
    let width = 2.0 * HIST_RANGE / HIST_BINS as f64;
    let bin = |v: f64| -> usize {
        let b = ((v + HIST_RANGE) / width).floor();
        if b.is_nan() {
            0
        } else {
            b.clamp(0.0, (HIST_BINS - 1) as f64) as usize
        }
    };
    for p in points {
        h[bin(p[1]) * HIST_BINS + bin(p[0])] += 1.0;
    }
    let n = points.len().max(1) as f64;
    let mut total = 0.0;
    for v in &mut h {
        *v = *v / n + HIST_SMOOTHING;
        total += *v;
    }
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// `KL(p‖q) + KL(q‖p)` between the histograms of two point sets.
pub fn histogram_divergence(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let p = histogram2d(a);
    let q = histogram2d(b);
    p.iter()
        .zip(&q)
        .map(|(pi, qi)| (pi - qi) * (pi / qi).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub schema_version: u32,
    pub n: usize,
    pub mean_nll: f64,
    pub valid_fraction: f64,
    pub hist_sym_kl: f64,
}

/// Scores `points` against the oracle; `reference` is an oracle sample for the histogram term.
pub fn generation_report(
    points: &[[f64; 2]],
    m: &MixtureModel,
    oracle: &ValidityOracle,
    reference: &[[f64; 2]],
) -> Result<GenerationReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "generation report needs at least one point".into(),
        ));
    }
    Ok(GenerationReport {
        schema_version: SCHEMA_VERSION,
        n: points.len(),
        mean_nll: mean_nll(m, points)?,
        valid_fraction: oracle.valid_fraction(points),
        hist_sym_kl: histogram_divergence(points, reference),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub mu: [f64; 2],
    pub jacobian: Jacobian,
    pub t: f64,
    pub sigma_eq: f64,
    pub sigma_eq_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityField {
    pub lambda1: f64,
    pub points: Vec<SensitivityPoint>,
}

impl SensitivityField {
    /// One `mu_x mu_y T sigma_eq` line per point.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# mu_x mu_y T sigma_eq\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.16e} {:.16e} {:.16e} {:.16e}\n",
                p.mu[0], p.mu[1], p.t, p.sigma_eq
            ));
        }
        s
    }
}

pub fn sensitivity_field<D: LatentDecoder + ?Sized>(
    decoder: &D,
    mus: &[[f64; 2]],
    lambda1: f64,
    h: f64,
) -> Result<SensitivityField> {
    let jacs = decoder_jacobians(decoder, mus, h)?;
    let points = mus
        .iter()
        .zip(jacs)
        .map(|(mu, jacobian)| {
            let t = sensitivity_t(&jacobian);
            let eq = predicted_sigma_eq(t, lambda1)?;
            Ok(SensitivityPoint {
                mu: *mu,
                jacobian,
                t,
                sigma_eq: eq.sigma,
                sigma_eq_defined: eq.defined,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityField { lambda1, points })
}

/// `n × n` grid of cell centers over `[lo, hi]²`, row-major in y then x.
pub fn latent_grid(lo: f64, hi: f64, n: usize) -> Vec<[f64; 2]> {
    let w = (hi - lo) / n.max(1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            out.push([lo + (ix as f64 + 0.5) * w, lo + (iy as f64 + 0.5) * w]);
        }
    }
    out
}
