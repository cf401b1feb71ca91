//! Settings and sink plumbing shared by the tokenizer and flow trainers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, LrSchedule, MlpSpec};

/// Width/depth shared by every network of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Number of linear layers.
    pub depth: usize,
    pub hidden: usize,
}

impl ArchSpec {
    pub fn mlp(&self, input_dim: usize, output_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            output_dim,
            hidden_dim: self.hidden,
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub log_every: u64,
    pub ckpt_every: u64,
    pub arch: ArchSpec,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.arch.depth == 0 || self.arch.hidden == 0 {
            return Err(Error::Config(
                "network depth and hidden width must be >= 1".into(),
            ));
        }
        if !(self.schedule.base_lr >= 0.0) || !self.schedule.base_lr.is_finite() {
            return Err(Error::Config(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(
                "adam betas must lie in [0,1) and eps > 0".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn should_log(&self, iteration: u64) -> bool {
        iteration == self.iterations || (self.log_every > 0 && iteration % self.log_every == 0)
    }

    pub(crate) fn should_checkpoint(&self, iteration: u64) -> bool {
        iteration == self.iterations || (self.ckpt_every > 0 && iteration % self.ckpt_every == 0)
    }
}

/// Receives periodic records and checkpoint opportunities from a trainer.
pub trait TrainingSink<R, T: ?Sized> {
    fn record(&mut self, _record: &R) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _trainer: &T) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl<R, T: ?Sized> TrainingSink<R, T> for NullSink {}

/// Keeps records in memory.
#[derive(Debug, Clone)]
pub struct MemorySink<R> {
    pub records: Vec<R>,
}

impl<R> Default for MemorySink<R> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
        }
    }
}

impl<R: Clone, T: ?Sized> TrainingSink<R, T> for MemorySink<R> {
    fn record(&mut self, record: &R) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}
