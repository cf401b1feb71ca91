//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod configs;
pub mod gradcheck;
