//! Crate-wide error type.

use thiserror::Error;

/// Errors shared across all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input matrix is not symmetric within the required tolerance.
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },

    /// The jitter ladder was exhausted without a successful factorization.
    /// This signals a covariance that is not positive semi-definite, i.e. a
    /// modeling bug upstream.
    #[error("matrix not factorizable after jitter up to {max_jitter:.3e}")]
    NotFactorizable { max_jitter: f64 },

    /// Operand shapes do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A repetition segment holds fewer than two samples.
    #[error("repetition segment {index} is empty or has fewer than two samples")]
    EmptySegment { index: usize },

    /// Times within a repetition must be strictly increasing.
    #[error("non-monotone time in repetition {index} at sample {sample}")]
    NonMonotoneTime { index: usize, sample: usize },

    /// The operation needs at least two repetitions.
    #[error("need at least two repetitions, got {got}")]
    TooFewRepetitions { got: usize },

    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// Mini-batch size must satisfy 1 <= |B| <= r.
    #[error("invalid batch size {batch_size} for {repetitions} repetitions")]
    InvalidBatchSize {
        batch_size: usize,
        repetitions: usize,
    },

    /// The requested evaluation grid exceeds the dense-covariance cap.
    #[error("evaluation grid of {requested} points exceeds the cap of {cap}")]
    GridTooLarge { requested: usize, cap: usize },

    /// Underlying file-system failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A dataset or model file does not parse.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
