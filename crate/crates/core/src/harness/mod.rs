//! Configuration, persistence, experiment pipelines and the command-line front end.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod experiments;

pub use config::{Profile, TrainingConfig};
