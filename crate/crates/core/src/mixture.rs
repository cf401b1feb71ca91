//! Ground-truth 2D Gaussian mixture: fractal construction, normalization,
//! exact clean and noise-convolved density, score, sampling, and GT-NLL.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Floor applied to log-densities before averaging. Points this far off the
/// mixture (decoded garbage) still produce a finite, comparable NLL.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;

/// Target per-axis standard deviation of the normalized mixture.
pub const SIGMA_DATA: f64 = 0.5;

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub const fn isotropic(v: f64) -> Self {
        Self::diag(v, v)
    }

    /// Covariance of a Gaussian with standard deviations `along`/`across`
    /// oriented so `along` points at `angle` radians.
    pub fn oriented(angle: f64, along: f64, across: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (a2, c2) = (along * along, across * across);
        Self {
            xx: a2 * c * c + c2 * s * s,
            xy: (a2 - c2) * s * c,
            yy: a2 * s * s + c2 * c * c,
        }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite()
    }

    pub fn inverse(&self) -> Cov2 {
        let d = self.det();
        Cov2::new(self.yy / d, -self.xy / d, self.xx / d)
    }

    pub fn add_isotropic(&self, v: f64) -> Cov2 {
        Cov2::new(self.xx + v, self.xy, self.yy + v)
    }

    /// Lower Cholesky factor `(l11, l21, l22)`.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        (l11, l21, l22)
    }

    fn quad(&self, dx: f64, dy: f64) -> f64 {
        self.xx * dx * dx + 2.0 * self.xy * dx * dy + self.yy * dy * dy
    }

    fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: Cov2,
}

/// Free parameters of the recursive branch construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPerturbation {
    pub trunk_length: f64,
    pub length_ratio_min: f64,
    pub length_ratio_max: f64,
    pub split_angle_deg: f64,
    pub angle_jitter_deg: f64,
    /// Cross-branch std as a fraction of the along-branch std.
    pub cross_ratio: f64,
    /// Per-segment weight of a child relative to its parent.
    pub child_weight_factor: f64,
}

impl Default for BranchPerturbation {
    fn default() -> Self {
        Self {
            trunk_length: 1.2,
            length_ratio_min: 0.55,
            length_ratio_max: 0.75,
            split_angle_deg: 25.0,
            angle_jitter_deg: 8.0,
            cross_ratio: 0.02,
            child_weight_factor: 0.5,
        }
    }
}

impl BranchPerturbation {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("trunk_length", self.trunk_length),
            ("length_ratio_min", self.length_ratio_min),
            ("length_ratio_max", self.length_ratio_max),
            ("split_angle_deg", self.split_angle_deg),
            ("angle_jitter_deg", self.angle_jitter_deg),
            ("cross_ratio", self.cross_ratio),
            ("child_weight_factor", self.child_weight_factor),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "branch perturbation {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.trunk_length == 0.0 || self.cross_ratio == 0.0 || self.child_weight_factor == 0.0 {
            return Err(Error::Config(
                "trunk_length, cross_ratio and child_weight_factor must be positive".into(),
            ));
        }
        if self.length_ratio_min > self.length_ratio_max || self.length_ratio_min == 0.0 {
            return Err(Error::Config(format!(
                "length ratio range [{}, {}] is empty or degenerate",
                self.length_ratio_min, self.length_ratio_max
            )));
        }
        Ok(())
    }
}

/// How a mixture was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MixtureMeta {
    pub depth: Option<u32>,
    pub segs_per_branch: Option<u32>,
    pub seed: Option<u64>,
    pub perturb: Option<BranchPerturbation>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    components: Vec<GaussianComponent>,
    pub meta: MixtureMeta,
}

/// Evaluation point for the noise-convolved density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyDensityQuery {
    pub point: [f64; 2],
    pub noise_sigma: f64,
}

impl NoisyDensityQuery {
    pub fn clean(point: [f64; 2]) -> Self {
        Self {
            point,
            noise_sigma: 0.0,
        }
    }

    pub fn new(point: [f64; 2], noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(Self { point, noise_sigma })
    }
}

impl MixtureModel {
    /// Validates the components and rescales weights to sum to one.
    pub fn new(mut components: Vec<GaussianComponent>, meta: MixtureMeta) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DegenerateMixture("mixture has no components".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "component {i} has non-positive weight {}",
                    c.weight
                )));
            }
            if !c.cov.is_positive_definite() || !c.mean.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component {i} covariance is not positive definite or mean not finite"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components, meta })
    }

    pub fn single(mean: [f64; 2], cov: Cov2) -> Result<Self> {
        Self::new(
            vec![GaussianComponent {
                weight: 1.0,
                mean,
                cov,
            }],
            MixtureMeta::default(),
        )
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Analytic mean of the mixture.
    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for c in &self.components {
            m[0] += c.weight * c.mean[0];
            m[1] += c.weight * c.mean[1];
        }
        m
    }

    /// Analytic covariance `Σφᵢ(Σᵢ + μᵢμᵢᵀ) − mmᵀ`.
    pub fn covariance(&self) -> Cov2 {
        let m = self.mean();
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for c in &self.components {
            xx += c.weight * (c.cov.xx + c.mean[0] * c.mean[0]);
            xy += c.weight * (c.cov.xy + c.mean[0] * c.mean[1]);
            yy += c.weight * (c.cov.yy + c.mean[1] * c.mean[1]);
        }
        Cov2::new(xx - m[0] * m[0], xy - m[0] * m[1], yy - m[1] * m[1])
    }

    /// Per-axis analytic standard deviation.
    pub fn axis_std(&self) -> [f64; 2] {
        let c = self.covariance();
        [c.xx.max(0.0).sqrt(), c.yy.max(0.0).sqrt()]
    }

    /// Precomputes per-component terms for noise level `sigma`.
    pub fn at_noise(&self, sigma: f64) -> Result<NoisyMixture> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let s2 = sigma * sigma;
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let cov = c.cov.add_isotropic(s2);
            let det = cov.det();
            if !(det > 0.0) {
                return Err(Error::Numerical(
                    "effective covariance is not positive definite".into(),
                ));
            }
            terms.push(ComponentTerm {
                log_coef: c.weight.ln() - (2.0 * PI).ln() - 0.5 * det.ln(),
                coef: c.weight / (2.0 * PI * det.sqrt()),
                mean: c.mean,
                inv: cov.inverse(),
            });
        }
        Ok(NoisyMixture { terms })
    }

    pub fn density(&self, q: NoisyDensityQuery) -> Result<f64> {
        Ok(self.at_noise(q.noise_sigma)?.density(q.point))
    }

    pub fn log_density(&self, q: NoisyDensityQuery) -> Result<f64> {
        Ok(self.at_noise(q.noise_sigma)?.log_density(q.point))
    }

    pub fn score(&self, q: NoisyDensityQuery) -> Result<[f64; 2]> {
        Ok(self.at_noise(q.noise_sigma)?.score(q.point))
    }

    /// Draws `n` points from a fresh stream derived from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = RngStream::new(seed, crate::rng::streams::DATA);
        self.sampler().sample(n, &mut rng)
    }

    pub fn sampler(&self) -> MixtureSampler {
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            cumulative.push(acc);
        }
        let chol = self.components.iter().map(|c| c.cov.cholesky()).collect();
        MixtureSampler {
            cumulative,
            means: self.components.iter().map(|c| c.mean).collect(),
            chol,
        }
    }

    /// Shift and per-axis scale so the analytic mean is the origin and each
    /// axis has standard deviation [`SIGMA_DATA`]. Weights are untouched.
    pub fn normalized(&self) -> Result<MixtureModel> {
        let m = self.mean();
        let cov = self.covariance();
        let mut scale = [0.0; 2];
        for (axis, var) in [cov.xx, cov.yy].into_iter().enumerate() {
            if !(var > 0.0) || !var.is_finite() {
                return Err(Error::DegenerateMixture(format!(
                    "axis {axis} has variance {var}; cannot rescale"
                )));
            }
            scale[axis] = SIGMA_DATA / var.sqrt();
        }
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent {
                weight: c.weight,
                mean: [scale[0] * (c.mean[0] - m[0]), scale[1] * (c.mean[1] - m[1])],
                cov: Cov2::new(
                    scale[0] * scale[0] * c.cov.xx,
                    scale[0] * scale[1] * c.cov.xy,
                    scale[1] * scale[1] * c.cov.yy,
                ),
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.normalized = true;
        Ok(MixtureModel { components, meta })
    }

    /// The default data distribution: fractal tree, then normalized.
    pub fn fractal(
        depth: u32,
        segs_per_branch: u32,
        seed: u64,
        perturb: BranchPerturbation,
    ) -> Result<MixtureModel> {
        build_fractal_mixture(depth, segs_per_branch, seed, perturb)?.normalized()
    }

    /// Tabular text: a `#` header with metadata, then one
    /// `weight mean_x mean_y cov_xx cov_xy cov_yy` line per component.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# velab-mixture v1\n");
        let _ = writeln!(s, "# components={}", self.components.len());
        let _ = writeln!(
            s,
            "# meta={}",
            serde_json::to_string(&self.meta).expect("mixture meta serializes")
        );
        s.push_str("# columns: weight mean_x mean_y cov_xx cov_xy cov_yy\n");
        for c in &self.components {
            let _ = writeln!(
                s,
                "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                c.weight, c.mean[0], c.mean[1], c.cov.xx, c.cov.xy, c.cov.yy
            );
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<MixtureModel> {
        let bad = |message: String| Error::Format {
            kind: "mixture",
            path: path.to_path_buf(),
            message,
        };
        let mut meta = MixtureMeta::default();
        let mut components = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(json) = rest.trim().strip_prefix("meta=") {
                    meta = serde_json::from_str(json)
                        .map_err(|e| bad(format!("line {}: bad meta: {e}", lineno + 1)))?;
                }
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 6 {
                return Err(bad(format!(
                    "line {}: expected 6 columns, found {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            components.push(GaussianComponent {
                weight: vals[0],
                mean: [vals[1], vals[2]],
                cov: Cov2::new(vals[3], vals[4], vals[5]),
            });
        }
        // weights as written already sum to one; keep them bit-exact
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.cov.is_positive_definite() {
                return Err(bad(format!("component {i} violates weight/PD invariants")));
            }
        }
        if components.is_empty() {
            return Err(bad("no components".into()));
        }
        Ok(MixtureModel { components, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<MixtureModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Recursive tree of branches, each drawn as `segs_per_branch` anisotropic
/// Gaussians at equal spacing. Geometry is in raw (unnormalized) units.
pub fn build_fractal_mixture(
    depth: u32,
    segs_per_branch: u32,
    seed: u64,
    perturb: BranchPerturbation,
) -> Result<MixtureModel> {
    perturb.validate()?;
    if segs_per_branch == 0 {
        return Err(Error::Config("segs_per_branch must be >= 1".into()));
    }
    if depth > 20 {
        return Err(Error::Config(format!(
            "depth {depth} is unreasonably large"
        )));
    }
    let mut rng = RngStream::new(seed, "mixture");
    let mut components =
        Vec::with_capacity(((1usize << (depth + 1)) - 1) * segs_per_branch as usize);
    let branch = Branch {
        start: [0.0, 0.0],
        angle: std::f64::consts::FRAC_PI_2,
        length: perturb.trunk_length,
        seg_weight: 1.0,
    };
    grow(
        branch,
        0,
        depth,
        segs_per_branch,
        &perturb,
        &mut rng,
        &mut components,
    );
    MixtureModel::new(
        components,
        MixtureMeta {
            depth: Some(depth),
            segs_per_branch: Some(segs_per_branch),
            seed: Some(seed),
            perturb: Some(perturb),
            normalized: false,
        },
    )
}

struct Branch {
    start: [f64; 2],
    angle: f64,
    length: f64,
    seg_weight: f64,
}

fn grow(
    b: Branch,
    level: u32,
    depth: u32,
    segs: u32,
    p: &BranchPerturbation,
    rng: &mut RngStream,
    out: &mut Vec<GaussianComponent>,
) {
    let dir = [b.angle.cos(), b.angle.sin()];
    let along = b.length / (2.0 * segs as f64);
    let cov = Cov2::oriented(b.angle, along, p.cross_ratio * along);
    for k in 0..segs {
        let t = (k as f64 + 0.5) / segs as f64 * b.length;
        out.push(GaussianComponent {
            weight: b.seg_weight,
            mean: [b.start[0] + t * dir[0], b.start[1] + t * dir[1]],
            cov,
        });
    }
    if level == depth {
        return;
    }
    let end = [
        b.start[0] + b.length * dir[0],
        b.start[1] + b.length * dir[1],
    ];
    for sign in [1.0, -1.0] {
        let ratio = rng.uniform_range(p.length_ratio_min, p.length_ratio_max);
        let jitter = rng.uniform_range(-p.angle_jitter_deg, p.angle_jitter_deg);
        let child = Branch {
            start: end,
            angle: b.angle + sign * (p.split_angle_deg + jitter).to_radians(),
            length: b.length * ratio,
            seg_weight: b.seg_weight * p.child_weight_factor,
        };
        grow(child, level + 1, depth, segs, p, rng, out);
    }
}

#[derive(Debug, Clone)]
struct ComponentTerm {
    log_coef: f64,
    coef: f64,
    mean: [f64; 2],
    inv: Cov2,
}

/// A mixture with its covariances inflated by `σ²I`, ready for evaluation.
#[derive(Debug, Clone)]
pub struct NoisyMixture {
    terms: Vec<ComponentTerm>,
}

// exp(-40) relative contributions are below double precision of the sum
const SKIP_MARGIN: f64 = 40.0;

impl NoisyMixture {
    /// `Σ φᵢ N(x; μᵢ, Σᵢ + σ²I)` summed directly.
    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let q = t.inv.quad(x[0] - t.mean[0], x[1] - t.mean[1]);
                t.coef * (-0.5 * q).exp()
            })
            .sum()
    }

    /// Log-density via streaming log-sum-exp, clamped at [`LOG_DENSITY_FLOOR`].
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in &self.terms {
            let e = t.log_coef - 0.5 * t.inv.quad(x[0] - t.mean[0], x[1] - t.mean[1]);
            if e > max {
                sum = sum * (max - e).exp() + 1.0;
                max = e;
            } else if e > max - SKIP_MARGIN {
                sum += (e - max).exp();
            }
        }
        let lp = max + sum.ln();
        if lp.is_finite() {
            lp.max(LOG_DENSITY_FLOOR)
        } else {
            LOG_DENSITY_FLOOR
        }
    }

    /// `∇ₓ log p` as the responsibility-weighted sum of `Σ*⁻¹(μᵢ − x)`,
    /// with responsibilities formed in the log domain so far-field points
    /// stay finite.
    pub fn score(&self, x: [f64; 2]) -> [f64; 2] {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut acc = [0.0; 2];
        for t in &self.terms {
            let d = [t.mean[0] - x[0], t.mean[1] - x[1]];
            let e = t.log_coef - 0.5 * t.inv.quad(d[0], d[1]);
            let g = t.inv.apply(d);
            if e > max {
                let r = (max - e).exp();
                sum = sum * r + 1.0;
                acc = [acc[0] * r + g[0], acc[1] * r + g[1]];
                max = e;
            } else if e > max - SKIP_MARGIN {
                let w = (e - max).exp();
                sum += w;
                acc[0] += w * g[0];
                acc[1] += w * g[1];
            }
        }
        [acc[0] / sum, acc[1] / sum]
    }

    /// Clamped log-densities, evaluated in parallel with order preserved.
    pub fn log_density_batch(&self, points: &[[f64; 2]]) -> Vec<f64> {
        points.par_iter().map(|p| self.log_density(*p)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSampler {
    cumulative: Vec<f64>,
    means: Vec<[f64; 2]>,
    chol: Vec<(f64, f64, f64)>,
}

impl MixtureSampler {
    pub fn draw(&self, rng: &mut RngStream) -> [f64; 2] {
        let total = *self.cumulative.last().expect("non-empty mixture");
        let u = rng.uniform() * total;
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        let (e0, e1) = (rng.normal(), rng.normal());
        let (l11, l21, l22) = self.chol[i];
        let m = self.means[i];
        [m[0] + l11 * e0, m[1] + l21 * e0 + l22 * e1]
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<[f64; 2]> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// Fills a row-major `n×2` buffer.
    pub fn fill(&self, out: &mut [f64], rng: &mut RngStream) {
        for row in out.chunks_exact_mut(2) {
            let p = self.draw(rng);
            row.copy_from_slice(&p);
        }
    }
}

/// `−(1/n) Σ log p(x)` under the clean mixture, with the clamp convention.
pub fn mean_nll(m: &MixtureModel, points: &[[f64; 2]]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "mean_nll of an empty point set".into(),
        ));
    }
    let clean = m.at_noise(0.0)?;
    let lps = clean.log_density_batch(points);
    Ok(-lps.iter().sum::<f64>() / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bumps() -> MixtureModel {
        MixtureModel::new(
            vec![
                GaussianComponent {
                    weight: 0.5,
                    mean: [1.0, 0.0],
                    cov: Cov2::isotropic(1.0),
                },
                GaussianComponent {
                    weight: 0.5,
                    mean: [-1.0, 0.0],
                    cov: Cov2::isotropic(1.0),
                },
            ],
            MixtureMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn fractal_component_counts() {
        let p = BranchPerturbation::default();
        assert_eq!(build_fractal_mixture(6, 8, 0, p).unwrap().len(), 1016);
        let m = build_fractal_mixture(0, 1, 0, p).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.components()[0].weight, 1.0);
        let m = build_fractal_mixture(2, 3, 5, p).unwrap();
        assert_eq!(m.len(), (8 - 1) * 3);
        let s: f64 = m.components().iter().map(|c| c.weight).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segments_are_elongated_along_their_branch() {
        let m = build_fractal_mixture(1, 4, 3, BranchPerturbation::default()).unwrap();
        // trunk points straight up: major axis is y
        let trunk = m.components()[0].cov;
        assert!(trunk.yy > 100.0 * trunk.xx);
        for c in m.components() {
            let (lo, hi) = c.cov.eigenvalues();
            assert!(hi / lo > 100.0);
        }
    }

    #[test]
    fn negative_perturbation_is_rejected() {
        let p = BranchPerturbation {
            angle_jitter_deg: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            build_fractal_mixture(2, 2, 0, p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn normalize_single_component() {
        let m = MixtureModel::single([3.0, 3.0], Cov2::isotropic(1.0)).unwrap();
        let n = m.normalized().unwrap();
        let c = n.components()[0];
        assert!(c.mean[0].abs() < 1e-15 && c.mean[1].abs() < 1e-15);
        assert!((c.cov.xx - 0.25).abs() < 1e-15 && (c.cov.yy - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalize_two_components_hits_target_moments() {
        // m2 = Σφ(Σ + μμᵀ): axis 0 var = 0.01 + 1, axis 1 var = 0.01
        let m = MixtureModel::new(
            vec![
                GaussianComponent {
                    weight: 0.5,
                    mean: [1.0, 0.0],
                    cov: Cov2::isotropic(0.01),
                },
                GaussianComponent {
                    weight: 0.5,
                    mean: [-1.0, 0.0],
                    cov: Cov2::isotropic(0.01),
                },
            ],
            MixtureMeta::default(),
        )
        .unwrap();
        assert!((m.axis_std()[0] - 1.01f64.sqrt()).abs() < 1e-15);
        let n = m.normalized().unwrap();
        let s = n.axis_std();
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
        let w: Vec<f64> = n.components().iter().map(|c| c.weight).collect();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn fractal_normalization_invariants() {
        let m = MixtureModel::fractal(6, 8, 11, BranchPerturbation::default()).unwrap();
        let mean = m.mean();
        let std = m.axis_std();
        assert!(mean[0].abs() < 1e-9 && mean[1].abs() < 1e-9);
        assert!((std[0] - 0.5).abs() < 1e-9 && (std[1] - 0.5).abs() < 1e-9);
        let s: f64 = m.components().iter().map(|c| c.weight).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_at_midpoint_of_two_bumps() {
        let m = two_bumps();
        let d = m.density(NoisyDensityQuery::clean([0.0, 0.0])).unwrap();
        let want = (-0.5f64).exp() / (2.0 * PI);
        assert!((d - want).abs() < 1e-15);
        assert!((want - 0.096532).abs() < 1e-6);
    }

    #[test]
    fn noise_inflates_covariance() {
        let m = MixtureModel::single([0.0, 0.0], Cov2::diag(0.01, 0.04)).unwrap();
        let d = m
            .density(NoisyDensityQuery::new([0.0, 0.0], 0.1).unwrap())
            .unwrap();
        let want = 1.0 / (2.0 * PI * (0.02f64 * 0.05).sqrt());
        assert!((d - want).abs() / want < 1e-14);
    }

    #[test]
    fn score_simple_cases() {
        let m = MixtureModel::single([0.0, 0.0], Cov2::isotropic(1.0)).unwrap();
        let s = m.score(NoisyDensityQuery::clean([1.0, 0.0])).unwrap();
        assert!((s[0] + 1.0).abs() < 1e-15 && s[1].abs() < 1e-15);
        let s = two_bumps()
            .score(NoisyDensityQuery::clean([0.0, 0.0]))
            .unwrap();
        assert!(s[0].abs() < 1e-15 && s[1].abs() < 1e-15);
    }

    #[test]
    fn far_field_is_finite() {
        let m = MixtureModel::fractal(3, 4, 0, BranchPerturbation::default()).unwrap();
        let ev = m.at_noise(0.0).unwrap();
        assert_eq!(ev.log_density([100.0, 100.0]), LOG_DENSITY_FLOOR);
        let s = ev.score([100.0, 100.0]);
        assert!(s[0].is_finite() && s[1].is_finite());
        assert!(mean_nll(&m, &[[100.0, 100.0]]).unwrap().is_finite());
    }

    #[test]
    fn nll_at_mode_and_empty_error() {
        let m = MixtureModel::single([0.0, 0.0], Cov2::isotropic(1.0)).unwrap();
        let v = mean_nll(&m, &[[0.0, 0.0]; 3]).unwrap();
        assert!((v - (2.0 * PI).ln()).abs() < 1e-14);
        assert!(mean_nll(&m, &[]).is_err());
    }

    #[test]
    fn negative_noise_is_rejected() {
        assert!(NoisyDensityQuery::new([0.0, 0.0], -0.1).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = MixtureModel::fractal(2, 3, 9, BranchPerturbation::default()).unwrap();
        let text = m.to_text();
        let back = MixtureModel::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = MixtureModel::fractal(3, 4, 0, BranchPerturbation::default()).unwrap();
        assert_eq!(m.sample(1, 42), m.sample(1, 42));
    }
}
