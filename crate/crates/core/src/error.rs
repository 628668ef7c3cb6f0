use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no node at position {position} (tree has {nodes} nodes)")]
    InvalidPosition { position: usize, nodes: usize },

    #[error("position {0} is an operator node; only leaves can be replaced")]
    NotALeaf(usize),

    #[error("cannot parse kernel expression {input:?}: {reason}")]
    Parse { input: String, reason: String },

    #[error("distribution mass sums to {sum}, expected 1")]
    NotNormalized { sum: String },

    #[error("feature shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("invalid distance weights: {0}")]
    InvalidWeights(String),

    #[error("hyperparameter layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("input has {got} columns but the kernel needs dimension {needed}")]
    DimensionMismatch { needed: usize, got: usize },

    #[error("Cholesky factorization failed after jitter levels {jitters:?}")]
    Cholesky { jitters: Vec<f64> },

    #[error("all {restarts} optimizer restarts failed: {failures:?}")]
    AllRestartsFailed { restarts: usize, failures: Vec<String> },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("evidence oracle failed: {0}")]
    Oracle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
