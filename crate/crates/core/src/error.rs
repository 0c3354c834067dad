use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("non-finite value in {tensor} at sample {sample}")]
    NonFiniteSample { tensor: &'static str, sample: usize },

    #[error("training aborted at step {step}: non-finite {tensor}")]
    Diverged { step: usize, tensor: &'static str },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("model format: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("no trial within budget {budget} (smallest selected count was {smallest})")]
    Budget { budget: usize, smallest: usize },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
