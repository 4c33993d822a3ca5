use thiserror::Error;

use crate::engine::Trajectory;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The mirror map's gradient cannot be inverted (e.g. a singular quadratic
    /// form); the caller has to use a dedicated update such as the kernel step.
    #[error("mirror map dual is not invertible; a specialized update is required")]
    SpecializedUpdateRequired,

    #[error("iterate diverged{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Divergence {
        step: Option<usize>,
        partial: Option<Box<Trajectory>>,
    },

    #[error("system is rank deficient")]
    RankDeficient,

    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn diverged() -> Self {
        Error::Divergence {
            step: None,
            partial: None,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
