use thiserror::Error;

use crate::lattice::Site;
use crate::spectrum::SpectralResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box: no lattice point z with z/alpha in {domain} at alpha = {alpha}")]
    DegenerateBox { domain: String, alpha: f64 },

    #[error("site {0:?} is not in the box")]
    NotInBox(Site),

    #[error("point {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("profile is not strictly positive (value {value} at {at:?})")]
    NonPositiveProfile { value: f64, at: Vec<f64> },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<SpectralResult>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
