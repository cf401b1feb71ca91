//! Run configuration: one TOML document with `[mixture]`, `[tokenizer.*]`,
//! `[flow.*]` and `[sampler]` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{LatentChoice, SamplerConfig};
use crate::mixture::BranchPerturbation;
use crate::nn::{AdamConfig, LrSchedule, ScheduleMode};
use crate::tokenizer::{LossConfig, LossMode};
use crate::train::{ArchSpec, TrainSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 4 layers, hidden 128, 20k iterations, batch 512.
    #[default]
    Desk,
    /// 8 layers, hidden 512, 200k iterations, batch 4096.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub depth: u32,
    pub segs_per_branch: u32,
    pub seed: u64,
    #[serde(default)]
    pub perturb: BranchPerturbation,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            segs_per_branch: 8,
            seed: 0,
            perturb: BranchPerturbation::default(),
        }
    }
}

/// Optimization settings of one network group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleMode,
    pub log_every: u64,
    pub ckpt_every: u64,
    /// Linear layers per network.
    pub depth: usize,
    pub hidden: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl StageConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (iterations, batch_size, depth, hidden) = match profile {
            Profile::Desk => (20_000, 512, 4, 128),
            Profile::Paper => (200_000, 4096, 8, 512),
        };
        Self {
            iterations,
            batch_size,
            lr: 1e-3,
            schedule: LrSchedule::warmup(1e-3).mode,
            log_every: 100,
            ckpt_every: 5_000,
            depth,
            hidden,
            adam: AdamConfig::default(),
        }
    }

    pub fn settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            seed,
            iterations: self.iterations,
            batch_size: self.batch_size,
            schedule: LrSchedule {
                base_lr: self.lr,
                mode: self.schedule,
            },
            adam: self.adam,
            log_every: self.log_every,
            ckpt_every: self.ckpt_every,
            arch: ArchSpec {
                depth: self.depth,
                hidden: self.hidden,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSection {
    pub train: StageConfig,
    pub loss: LossConfig,
}

/// Flow-training latent: tokenizer default by loss mode, forced sample/mean, or raw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LatentSetting {
    #[default]
    Auto,
    Sample,
    Mean,
    Raw,
}

impl LatentSetting {
    pub fn choice(&self) -> Option<LatentChoice> {
        match self {
            LatentSetting::Sample => Some(LatentChoice::Sample),
            LatentSetting::Mean => Some(LatentChoice::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSection {
    pub train: StageConfig,
    #[serde(default)]
    pub latent: LatentSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub seed: u64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub mixture: MixtureConfig,
    pub tokenizer: TokenizerSection,
    pub flow: FlowSection,
    pub sampler: SamplerConfig,
}

impl TrainingConfig {
    /// Profile defaults with a VE tokenizer at `λ₁ = 1e-2`.
    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        Self {
            seed,
            profile,
            output_dir: None,
            mixture: MixtureConfig::default(),
            tokenizer: TokenizerSection {
                train: StageConfig::for_profile(profile),
                loss: LossConfig::new(LossMode::ve(1e-2)),
            },
            flow: FlowSection {
                train: StageConfig::for_profile(profile),
                latent: LatentSetting::Auto,
            },
            sampler: SamplerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit
        for (name, v) in [("seed", self.seed), ("mixture.seed", self.mixture.seed)] {
            if v > i64::MAX as u64 {
                return Err(Error::Config(format!("{name} must be <= {}", i64::MAX)));
            }
        }
        for (name, s) in [
            ("tokenizer", &self.tokenizer.train),
            ("flow", &self.flow.train),
        ] {
            for (field, v) in [
                ("iterations", s.iterations),
                ("log_every", s.log_every),
                ("ckpt_every", s.ckpt_every),
            ] {
                if v > i64::MAX as u64 {
                    return Err(Error::Config(format!(
                        "{name}.{field} must be <= {}",
                        i64::MAX
                    )));
                }
            }
            s.settings(self.seed)
                .validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
            match s.schedule {
                ScheduleMode::Constant => {}
                ScheduleMode::Warmup { warmup_frac } => check_frac(name, warmup_frac)?,
                ScheduleMode::InverseSqrt {
                    warmup_frac,
                    ref_steps,
                } => {
                    check_frac(name, warmup_frac)?;
                    if ref_steps == 0 {
                        return Err(Error::Config(format!("{name}: ref_steps must be > 0")));
                    }
                }
            }
        }
        self.tokenizer.loss.mode.validate()?;
        self.mixture.perturb.validate()?;
        if self.mixture.depth > 16 {
            return Err(Error::Config("mixture depth must be <= 16".into()));
        }
        self.sampler.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Identity of a tokenizer run trained on the mixture file with digest `mixture_sha`.
    pub fn tokenizer_hash(&self, mixture_sha: &str) -> String {
        stable_hash(&serde_json::json!({
            "stage": "tokenizer",
            "seed": self.seed,
            "mixture": mixture_sha,
            "train": cadence_free(&self.tokenizer.train),
            "loss": self.tokenizer.loss,
        }))
    }

    /// Identity of a flow run on top of the tokenizer run `tokenizer_hash` (or raw data).
    pub fn flow_hash(&self, mixture_sha: &str, tokenizer_hash: Option<&str>) -> String {
        stable_hash(&serde_json::json!({
            "stage": "flow",
            "seed": self.seed,
            "mixture": mixture_sha,
            "tokenizer": tokenizer_hash,
            "train": cadence_free(&self.flow.train),
            "latent": self.flow.latent,
        }))
    }
}

fn check_frac(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name}: warmup_frac must lie in [0, 1]"
        )))
    }
}

/// Logging and checkpoint cadence do not change the trained parameters.
fn cadence_free(s: &StageConfig) -> StageConfig {
    StageConfig {
        log_every: 0,
        ckpt_every: 0,
        ..*s
    }
}

/// Hex sha256 of the compact JSON form.
pub fn stable_hash(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
