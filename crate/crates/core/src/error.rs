use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,

    #[error("gradient of the distance is undefined at a nondifferentiable point (zero distance)")]
    NondifferentiablePoint,

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("transport problem of {rows}x{cols} entries exceeds the size limit of {limit}")]
    ProblemTooLarge { rows: usize, cols: usize, limit: usize },

    #[error("transport solver failed: {0}")]
    Solver(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
