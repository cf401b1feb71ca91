//! Randomized training configurations covering every field and enum variant.

use proptest::prelude::*;
use velab::flow::SamplerConfig;
use velab::harness::config::{LatentSetting, MixtureConfig, StageConfig};
use velab::harness::{Profile, TrainingConfig};
use velab::mixture::BranchPerturbation;
use velab::nn::{AdamConfig, ScheduleMode};
use velab::tokenizer::{LossConfig, LossMode, ReconNorm, RegTarget};

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn loss_mode() -> impl Strategy<Value = LossMode> {
    prop_oneof![
        finite(1e-8, 10.0).prop_map(|beta| LossMode::Kl { beta }),
        (
            finite(1e-6, 1.0),
            finite(0.0, 1e-3),
            finite(0.0, 5.0),
            finite(1e-12, 1e-3)
        )
            .prop_map(|(lambda1, lambda2, tau, delta)| {
                LossMode::Ve {
                    lambda1,
                    lambda2,
                    tau,
                    delta,
                }
            }),
        finite(1e-4, 2.0).prop_map(|sigma| LossMode::FixedVar { sigma }),
        finite(1e-6, 1.0).prop_map(|alpha| LossMode::CandidateNegVar { alpha }),
        finite(1e-6, 1.0).prop_map(|beta_log| LossMode::CandidateLogEntropy { beta_log }),
    ]
}

fn schedule() -> impl Strategy<Value = ScheduleMode> {
    prop_oneof![
        Just(ScheduleMode::Constant),
        finite(0.0, 0.5).prop_map(|warmup_frac| ScheduleMode::Warmup { warmup_frac }),
        (finite(0.0, 0.5), 1u64..100_000).prop_map(|(warmup_frac, ref_steps)| {
            ScheduleMode::InverseSqrt {
                warmup_frac,
                ref_steps,
            }
        }),
    ]
}

fn stage() -> impl Strategy<Value = StageConfig> {
    (
        0u64..1_000_000,
        1usize..8192,
        finite(1e-6, 1e-1),
        schedule(),
        (0u64..10_000, 0u64..100_000),
        (1usize..=16, 1usize..1024),
        (
            finite(0.0, 0.999),
            finite(0.9, 0.99999),
            finite(1e-12, 1e-6),
        ),
    )
        .prop_map(
            |(
                iterations,
                batch_size,
                lr,
                schedule,
                (log_every, ckpt_every),
                (depth, hidden),
                (b1, b2, eps),
            )| StageConfig {
                iterations,
                batch_size,
                lr,
                schedule,
                log_every,
                ckpt_every,
                depth,
                hidden,
                adam: AdamConfig {
                    beta1: b1,
                    beta2: b2,
                    eps,
                },
            },
        )
}

pub fn config() -> impl Strategy<Value = TrainingConfig> {
    (
        any::<u32>(),
        prop_oneof![Just(Profile::Desk), Just(Profile::Paper)],
        proptest::option::of("[a-z0-9_/]{1,20}"),
        (1u32..8, 1u32..12, any::<u32>()),
        (stage(), loss_mode(), any::<bool>(), any::<bool>()),
        (
            stage(),
            prop_oneof![
                Just(LatentSetting::Auto),
                Just(LatentSetting::Sample),
                Just(LatentSetting::Mean),
                Just(LatentSetting::Raw)
            ],
        ),
        1usize..500,
    )
        .prop_map(
            |(
                seed,
                profile,
                out,
                (depth, segs, mseed),
                (tstage, mode, l2, mean),
                (fstage, latent),
                steps,
            )| {
                let mut c = TrainingConfig::for_profile(profile, seed as u64);
                c.output_dir = out;
                c.mixture = MixtureConfig {
                    depth,
                    segs_per_branch: segs,
                    seed: mseed as u64,
                    perturb: BranchPerturbation::default(),
                };
                c.tokenizer.train = tstage;
                c.tokenizer.loss = LossConfig {
                    mode,
                    recon_norm: if l2 {
                        ReconNorm::L2
                    } else {
                        ReconNorm::SquaredL2
                    },
                    reg_target: if mean {
                        RegTarget::Mean
                    } else {
                        RegTarget::Sample
                    },
                };
                c.flow.train = fstage;
                c.flow.latent = latent;
                c.sampler = SamplerConfig { steps };
                c
            },
        )
}

/// TOML and JSON round trips plus hash stability; `Err` names the first mismatch.
pub fn check_round_trip(cfg: &TrainingConfig) -> Result<(), String> {
    cfg.validate()
        .map_err(|e| format!("generated config invalid: {e}"))?;
    let text = cfg.to_toml().map_err(|e| e.to_string())?;
    let back = TrainingConfig::from_toml(&text).map_err(|e| e.to_string())?;
    if &back != cfg {
        return Err(format!("TOML round trip changed {cfg:?}"));
    }
    let json: TrainingConfig = serde_json::from_str(&cfg.to_json().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    if &json != cfg {
        return Err(format!("JSON round trip changed {cfg:?}"));
    }
    if back.tokenizer_hash("m") != cfg.tokenizer_hash("m") {
        return Err("hash differs after round trip".into());
    }
    Ok(())
}
