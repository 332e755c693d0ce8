use thiserror::Error;

use crate::lagrange::A4Report;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A source or distortion violates one of the model assumptions.
    #[error("assumption ({assumption}) violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("transition tail is not normalized: p0 + 2*sum(p_n) = {sum} (tolerance {tol:e})")]
    Normalization { sum: f64, tol: f64 },

    /// A linear solve failed or returned a solution with a large residual.
    #[error("numerical failure: {detail} (residual {residual:e})")]
    Numerical { detail: String, residual: f64 },

    /// Fixed-point iteration did not reach the requested tolerance.
    #[error("no convergence after {iterations} iterations (last change {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// The requested multiplier or constraint is not covered by the computed thresholds.
    #[error("k_max = {k_max} is insufficient: {detail}")]
    KMaxInsufficient { k_max: usize, detail: String },

    /// The calibration sequence is not strictly increasing.
    #[error("calibration sequence is not increasing (first violation at k = {})", .0.first_violation.unwrap_or(0))]
    A4Violation(A4Report),

    /// Two quantities that must agree by construction do not.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
