use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Soft conditions (degenerate hyperparameter data, low effective sample
/// size, clamped variances) are reported as flags on the returned values
/// rather than as errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("NaN or infinite input")]
    NonFiniteInput,

    #[error("point {x} lies outside the kernel domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("Gram matrix is not positive definite even with jitter {jitter:e}")]
    SingularGram { jitter: f64 },

    #[error("duplicate node at {0}")]
    DuplicateNode(f64),

    #[error("nodes are not sorted in strictly increasing order")]
    UnsortedNodes,

    #[error("no candidate nodes available")]
    NoCandidates,

    #[error("integrand returned non-positive value {value} at {x:?}")]
    NonPositiveEvaluation { x: Vec<f64>, value: f64 },

    #[error("solver breakdown at iteration {iteration}: curvature {curvature:e} is not positive")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("operator failed the positive-definiteness probe: <v, Av> = {value:e}")]
    NotPositiveDefinite { value: f64 },

    #[error("belief has dimension {belief}, operator has dimension {operator}")]
    BeliefDimensionMismatch { belief: usize, operator: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solve trace has {got} recorded iterations, need at least {needed}")]
    InsufficientTrace { needed: usize, got: usize },

    #[error("vector field returned a non-finite value at t = {t}")]
    NonFiniteField { t: f64 },

    #[error("state covariance lost positive semi-definiteness at t = {t}")]
    CovarianceBreakdown { t: f64 },

    #[error("step size {h} does not divide the interval length {span}")]
    StepMismatch { h: f64, span: f64 },

    #[error("global error is zero: the solver is exact on this problem")]
    ZeroError,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}
