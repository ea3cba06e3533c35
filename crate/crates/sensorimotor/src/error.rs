//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix contained NaN or infinite entries.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The Gram matrix of the requested servo branch could not be inverted.
    #[error("singular Jacobian in the {branch} branch (rank-deficient with zero damping)")]
    SingularJacobian { branch: &'static str },

    /// Gradient descent increased the cost over several consecutive steps.
    #[error("gradient descent diverged; use a smaller learning gain gamma")]
    Diverged,

    #[error("empty observation set")]
    EmptyData,

    /// No observation falls inside the unit's neighbourhood ball.
    #[error("no observations inside the neighbourhood of unit {unit}")]
    EmptyNeighborhood { unit: usize },

    /// The winner unit for the queried configuration was never trained.
    #[error("winner unit {unit} is untrained at the queried configuration")]
    UntrainedRegion { unit: usize },

    /// The plant does not expose a linear parametrisation.
    #[error("plant '{plant}' has no linearly parametrisable model")]
    UnsupportedStructure { plant: &'static str },

    #[error("configuration outside the plant workspace")]
    OutOfWorkspace,

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
