//! Error type shared across the crate.

/// Crate-wide error enum. Variants carry enough context to print a
/// useful one-line message; operations document which ones they return.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("batch is empty")]
    BatchEmpty,

    #[error("batch size {requested} exceeds client sample count {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot partition {samples} samples across {clients} clients")]
    TooManyClients { clients: usize, samples: usize },

    #[error("local iteration count must be at least 1")]
    InvalidIterationCount,

    #[error("no client reports to aggregate")]
    EmptyReportSet,

    #[error("momentum coefficient 1 makes the gradient reconstruction degenerate")]
    DegenerateBeta,

    #[error("operation requires quadratic client models")]
    NotQuadratic,

    #[error("growth window contains a non-positive value")]
    NonpositiveValueInWindow,

    #[error("growth window needs at least {min} points, got {got}")]
    WindowTooSmall { min: usize, got: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
