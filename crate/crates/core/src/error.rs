use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A formula was evaluated at a singular point (e.g. inverse-square at d = 0).
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "quadrature did not converge within the refinement budget (last estimate {estimate:e})"
    )]
    NonConvergence { estimate: f64 },

    #[error("backscatter tail is not negligible at max_depth = {max_depth} m (estimate {estimate:e}); use a larger max_depth")]
    TailNotNegligible { max_depth: f64, estimate: f64 },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("backscatter estimation failed: {0}")]
    EstimationFailed(String),

    #[error("light rig cannot be solved: {0}")]
    UnsolvableRig(String),

    #[error("no pixels to evaluate: the shared valid mask is empty")]
    EmptyMask,

    #[error("restoration failed: residual image has zero dynamic range")]
    ZeroDynamicRange,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
