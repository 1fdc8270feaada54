use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("step {t} out of range 0..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("unified consensus with lambda > 0 requires an unconditional prediction")]
    MissingUnconditional,
    #[error("bad consensus weights: {0}")]
    BadWeights(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("model does not expose an exact density")]
    NoExactDensity,
    #[error("B-marginals disagree by {0:e}")]
    InconsistentBMarginal(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("grid of {pixels} pixels exceeds the cap of {cap}")]
    SizeCap { pixels: usize, cap: usize },
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("patch {0} has no neighbouring patch with known pixels")]
    UnreconstructablePatch(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
