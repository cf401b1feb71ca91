//! Dense ReLU networks with hand-written reverse mode, and Adam.

mod adam;
mod mlp;

pub use adam::{lr_at, AdamConfig, AdamState, LrSchedule, ScheduleMode};
pub use mlp::{DenseLayer, GradientBuffer, LayerGrad, MlpNetwork, MlpSpec, Tape};
