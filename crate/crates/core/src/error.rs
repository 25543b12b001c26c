use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by model construction, preparation, propagation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("basis of {requested} states exceeds the hard cap of {cap} (raise the cap or lower e_cutoff)")]
    BasisTooLarge { requested: usize, cap: usize },

    #[error("energy window [{lo}, {hi}] selects no levels")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error(
        "window ends at level {last} of {dim}; it must stay {margin_percent}% of the basis below the \
         truncation edge (try e_cutoff >= {suggested_cutoff:.2})"
    )]
    TruncationGuard {
        last: usize,
        dim: usize,
        margin_percent: f64,
        suggested_cutoff: f64,
    },

    #[error("eigensolver failed on a {dim}x{dim} matrix (max |H_ij| = {max_abs:.3e}): {reason}")]
    Eigensolver {
        dim: usize,
        max_abs: f64,
        reason: String,
    },

    #[error("window has {found} levels, below the statistical floor of {required}")]
    StatisticalFloor { found: usize, required: usize },

    #[error("preparation rejected: {0}")]
    Preparation(String),

    #[error(
        "participation ratio not saturated after prep_time {prep_time} (half-window ratio {ratio:.3} > {threshold}); \
         try a longer prep_time"
    )]
    NotErgodic {
        prep_time: f64,
        ratio: f64,
        threshold: f64,
    },

    #[error("trace does not decay below {threshold}")]
    NoDecay { threshold: f64 },

    #[error("decay fit window holds {found} points, need at least {required}")]
    FitWindowTooShort { found: usize, required: usize },

    #[error("scaling curve needs at least {required} distinct lambda values, got {found}")]
    InsufficientLambda { found: usize, required: usize },

    #[error("scaling curve does not reach the 0.5 plateau: {0}")]
    NoPlateau(String),

    #[error("surface of {rows}x{cols} points exceeds the memory guard of {cap} points")]
    SurfaceTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("model kind mismatch: {0}")]
    ModelKind(String),

    #[error("model cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eigensolver { .. }
                | Error::NotErgodic { .. }
                | Error::NoDecay { .. }
                | Error::FitWindowTooShort { .. }
                | Error::NoPlateau(_)
                | Error::StatisticalFloor { .. }
        )
    }
}
