use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index range invalid: {0}")]
    Range(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("inconsistent format: {0}")]
    Format(String),
    #[error("invalid spec: {0}")]
    Validation(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged (non-finite loss) at step {step}, batch {batch}")]
    Diverged { step: usize, batch: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
