use thiserror::Error;

/// Errors produced by problem construction, schedule validation and solver runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral estimation did not converge after {iterations} iterations (best estimate {estimate:.6e}, residual {residual:.3e})")]
    SpectralNoConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("schedule construction rejected: {0}")]
    ScheduleRejected(String),

    #[error("linear system is singular or ill-conditioned ({context})")]
    SingularSystem { context: &'static str },

    #[error("x-update step coefficient too small: requires eta > rho * lambda_max(A'A) = {required:.6e}, got eta = {eta:.6e}; use the exact x-update with an explicit positive definite metric instead")]
    IndefiniteLinearizedMetric { required: f64, eta: f64 },

    #[error("numerical divergence at iteration {iteration}: non-finite value in {variable}")]
    Divergence {
        iteration: usize,
        variable: &'static str,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
