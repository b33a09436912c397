use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("batch size {batch} out of range for client with {samples} samples")]
    BatchSize { batch: usize, samples: usize },

    #[error("subspace dimension {r} invalid for ambient dimension {d}")]
    SubspaceDim { r: usize, d: usize },

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("reference optimum has zero norm")]
    ZeroReference,

    #[error("residual is not orthogonal to the projector row space (max deviation {0:e})")]
    NotOrthogonal(f64),

    #[error("aggregation requires at least one client endpoint")]
    EmptyAggregation,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("every learning-rate candidate diverged for het_level {0}")]
    AllCandidatesDiverged(f64),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, FedError>;

impl FedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    ) -> Self {
        FedError::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }
}
