use thiserror::Error;

use crate::reticulum::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid tree structure: {0}")]
    Structure(String),

    #[error("leaf statistics are stale; refresh them against the training data first")]
    StaleStats,

    #[error("instance too large for exhaustive enumeration: {leaves}^{points} configurations exceeds {limit}")]
    TooLarge {
        leaves: usize,
        points: usize,
        limit: u64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("non-finite gradient at node {node} after {step} optimizer steps")]
    NonFiniteGradient { node: NodeId, step: usize },

    #[error("degenerate hyperplane: normal vector is zero")]
    DegenerateHyperplane,

    #[error("unsupported model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure came from reading or parsing input files.
    pub fn is_ingestion(&self) -> bool {
        matches!(
            self,
            Error::Ingestion { .. }
                | Error::Dataset(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
