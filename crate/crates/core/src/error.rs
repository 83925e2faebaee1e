use thiserror::Error;

/// Errors raised by the inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReproError {
    /// The caller handed in something that violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An argument lies outside the domain of a function (e.g. `logit(1.5)`).
    #[error("domain error: {0}")]
    Domain(String),

    /// The quasi-MLE diverges because the classes are (quasi-)separated.
    #[error("separation detected: {0}")]
    Separation(String),

    /// Non-finite values or singular matrices encountered during computation.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// The covariance estimate is too close to singular for a Wald test.
    #[error("ill-conditioned covariance: min eigenvalue {0:e}")]
    IllConditioned(f64),

    /// Every response falls into a single class.
    #[error("degenerate response: {0}")]
    Degenerate(String),

    /// An iterative solver hit its iteration cap. Carries the last iterate.
    #[error("solver did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NoConvergence {
        sweeps: usize,
        last_change: f64,
        beta: Vec<f64>,
        sigma: f64,
    },
}

impl ReproError {
    /// True for failures of the numerical machinery as opposed to bad user input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            ReproError::InvalidInput(_) | ReproError::Domain(_) | ReproError::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ReproError>;
