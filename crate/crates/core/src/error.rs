use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("profile fit at psi = {psi} did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        psi: f64,
        grad_norm: f64,
        iterations: usize,
    },

    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    #[error("invalid profile: constrained log-likelihood {loglik} exceeds the maximum {max}")]
    InvalidProfile { loglik: f64, max: f64 },

    #[error("modified root is indeterminate for |r| = {0:.3e}")]
    Indeterminate(f64),

    #[error("target {target} outside pivot range [{low}, {high}]")]
    OutOfRange { target: f64, low: f64, high: f64 },

    #[error("invalid losses: l10 + l01 - l11 = {0} must be positive")]
    InvalidLosses(f64),

    #[error("{failed} of {total} replicates failed, above the 1% cap")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    /// True for errors caused by bad user input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::InvalidLosses(_))
    }
}
