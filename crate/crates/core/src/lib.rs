//! Variance-expansion tokenizer lab on a 2D fractal mixture.
//!
//! Ground-truth Gaussian mixture oracle, a small MLP kernel with manual
//! backprop and Adam, a Gaussian tokenizer with KL / variance-expansion
//! objectives, a flow-matching model over its latents, numerical checks of the
//! collapse and equilibrium analyses, and the experiment harness behind the
//! `velab` binary.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops over 2×2 blocks read closer to the formulas
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod checkpoint;
pub mod decoder;
pub mod error;
pub mod flow;
pub mod harness;
pub mod matrix;
pub mod mixture;
pub mod nn;
pub mod rng;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
