use thiserror::Error;

use crate::geometry::Mat3;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The damped normal matrix could not be factored.
    #[error("damped normal matrix is not positive definite: {matrix:?}")]
    Solver { matrix: Mat3 },

    /// Local fix is missing and no earlier refined state exists.
    #[error("no prior available: local fix missing and no refined history")]
    NoPrior,

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("runs have unequal lengths ({expected} vs {found})")]
    RaggedRuns { expected: usize, found: usize },

    #[error("no runs to aggregate")]
    EmptyRuns,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
