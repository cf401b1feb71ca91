use serde::{Deserialize, Serialize};

use super::mlp::{GradientBuffer, MlpNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleMode {
    Constant,
    /// Linear ramp from 0 over `warmup_frac` of the run, then constant.
    Warmup {
        warmup_frac: f64,
    },
    /// Warmup, then `1/sqrt(step / ref_steps)` decay once past `ref_steps`.
    InverseSqrt {
        warmup_frac: f64,
        ref_steps: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub mode: ScheduleMode,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self {
            base_lr,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn warmup(base_lr: f64) -> Self {
        Self {
            base_lr,
            mode: ScheduleMode::Warmup { warmup_frac: 0.02 },
        }
    }
}

/// Learning rate at `step` of a run lasting `total_steps`.
pub fn lr_at(schedule: &LrSchedule, step: u64, total_steps: u64) -> f64 {
    let ramp = |frac: f64| {
        let w = frac * total_steps as f64;
        if w <= 0.0 {
            1.0
        } else {
            (step as f64 / w).min(1.0)
        }
    };
    match schedule.mode {
        ScheduleMode::Constant => schedule.base_lr,
        ScheduleMode::Warmup { warmup_frac } => schedule.base_lr * ramp(warmup_frac),
        ScheduleMode::InverseSqrt {
            warmup_frac,
            ref_steps,
        } => {
            let decay = (step as f64 / ref_steps.max(1) as f64).max(1.0).sqrt();
            schedule.base_lr * ramp(warmup_frac) / decay
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: GradientBuffer,
    pub v: GradientBuffer,
    pub step: u64,
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    pub total_steps: u64,
}

impl AdamState {
    pub fn new(
        net: &MlpNetwork,
        config: AdamConfig,
        schedule: LrSchedule,
        total_steps: u64,
    ) -> Self {
        Self {
            m: GradientBuffer::zeros_like(net),
            v: GradientBuffer::zeros_like(net),
            step: 0,
            config,
            schedule,
            total_steps,
        }
    }

    /// Bias-corrected Adam update using the scheduled learning rate of the
    /// step being taken (1-based).
    pub fn step(&mut self, net: &mut MlpNetwork, grads: &GradientBuffer) -> Result<()> {
        if !grads.is_congruent(net) || !self.m.is_congruent(net) {
            return Err(Error::shape(
                "AdamState::step",
                "gradient buffer congruent with network",
                "mismatched layer shapes",
            ));
        }
        if let Some(block) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { block });
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let lr = lr_at(&self.schedule, self.step, self.total_steps);
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[k];
            let m = &mut self.m.layers[k];
            let v = &mut self.v.layers[k];
            let blocks = [
                (&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight),
                (&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias),
            ];
            for (p, g, m, v) in blocks {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
