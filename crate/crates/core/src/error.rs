use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solvers and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid drift: {0}")]
    InvalidDrift(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid extent too small: {0}")]
    GridExtent(String),

    #[error(
        "shooting failed to bracket the terminal condition (tried p0 in [{p_lo:.3e}, {p_hi:.3e}])"
    )]
    Shooting { p_lo: f64, p_hi: f64 },

    #[error("direct minimization did not converge after {iterations} iterations (gradient {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("degenerate second variation: {0}")]
    DegenerateVariation(String),

    #[error("controlled paths left the controller grid: {flagged} of {total}")]
    GridCoverage { flagged: usize, total: usize },

    #[error("ill-conditioned bridge: normalisation {0:.3e} below floor")]
    IllConditionedBridge(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
