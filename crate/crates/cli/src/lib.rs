//! Config-driven experiment harness around the `biasadapt` engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod compare;
pub mod config;
pub mod experiment;

pub use config::ExperimentConfig;

/// Environment variable naming the root directory for all run artifacts.
pub const OUTPUT_ROOT_ENV: &str = "BIASADAPT_OUTPUT_ROOT";
