use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unit mismatch: {0} vs {1}")]
    UnitMismatch(f64, f64),

    #[error("mixture weights sum to {0}, expected 1")]
    UnnormalizedWeights(f64),

    #[error("expected a single-component intensity, found {0} components")]
    NotSingleComponent(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("negative intensity sample {0}")]
    NegativeIntensity(f64),

    #[error("monte-carlo estimate of an inner product is not positive ({0}); increase the sample count")]
    NonPositiveEstimate(f64),

    #[error("detection profile exceeds one: missed-detection mass {0} is negative")]
    InvalidDetectionProfile(f64),

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("no admissible action: every candidate lies outside the surveillance area")]
    NoAdmissibleAction,

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
