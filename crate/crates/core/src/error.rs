use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("target row {row} sums to {sum}, expected 1")]
    TargetNotDistribution { row: usize, sum: f64 },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid imbalance profile: {0}")]
    InvalidProfile(String),

    #[error("class {class}: need {needed} rows, only {available} available")]
    InsufficientRows {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("class {0} has no labeled rows")]
    EmptyClass(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stale unroll cache: cache from step {cache_step}, model at step {model_step}")]
    StaleCache { cache_step: u64, model_step: u64 },

    #[error("non-finite loss at iteration {iter}")]
    Diverged { iter: u64, dump: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
