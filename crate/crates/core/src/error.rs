use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss builder is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {record}: {message}")]
    InvalidRecord { record: usize, message: String },

    #[error("index {index} out of range ({len} available) in {context}")]
    OutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("vertex {0} is not reachable from the root")]
    Unreachable(usize),

    #[error("relaxed evaluation requires predictions over the gold entity boundaries with per-token types")]
    RelaxedNeedsGivenBoundaries,

    #[error("single-head loss requires exactly one head per token; token {token} has {count}")]
    NotSingleHead { token: usize, count: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
