//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Image or block dimensions are invalid for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Two vectors that must agree in length do not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// An input required to be zero-mean is not.
    #[error("input not centered: |mean| = {mean:.3e} exceeds tolerance {tol:.3e}")]
    NotCentered { mean: f64, tol: f64 },

    /// Matrix shapes do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A matrix required to have full column rank is numerically rank deficient.
    #[error("rank deficient: smallest singular value {sigma_min:.3e}")]
    RankDeficient { sigma_min: f64 },

    /// No images were supplied where at least one is required.
    #[error("empty dataset")]
    EmptyDataset,

    /// Images in a dataset do not share dimensions, or a model does not match its input.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A kernel matrix has a zero diagonal entry (zero-norm block under the linear kernel).
    #[error("zero diagonal in kernel at index {index}")]
    ZeroDiagonal { index: usize },

    /// A kernel matrix has a significantly negative eigenvalue.
    #[error("indefinite kernel: eigenvalue {eigenvalue:.3e}")]
    IndefiniteKernel { eigenvalue: f64 },

    /// Distortion calibration could not bracket the requested error level.
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    /// The 1NN corpus has no entries.
    #[error("empty corpus")]
    EmptyCorpus,

    /// A class label is outside the supported range.
    #[error("label {label} out of range 0..={max}")]
    LabelOutOfRange { label: u8, max: u8 },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// Stored checksum does not match the payload.
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },

    /// A loaded model violates a structural invariant.
    #[error("model invariant violated: {0}")]
    InvariantViolation(String),

    /// The model file carries an unsupported format version.
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}
