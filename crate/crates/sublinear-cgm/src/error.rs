//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate at position {index}")]
    NonFinite { index: usize },

    #[error("not a convex combination: {reason}")]
    NotConvexCombination { reason: String },

    #[error("point {index} is not unit norm (norm = {norm})")]
    NotUnitNorm { index: usize, norm: f64 },

    #[error("query norm {norm} exceeds scaling constant {bound}")]
    NormExceedsBound { norm: f64, bound: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("fallback policy `fail` triggered: no candidate reached the score threshold")]
    FallbackFailed,

    #[error("value iteration did not reach residual {residual:e} within {sweeps} sweeps")]
    ValueIterationDiverged { residual: f64, sweeps: usize },

    #[error("objective returned a non-finite value at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("index file invalid: {0}")]
    IndexFormat(String),

    #[error("invalid MDP specification: {0}")]
    MdpFormat(String),

    #[error("invalid run configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
