use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rollout diverged at step {step} (state component exceeded {limit:e})")]
    Diverged { step: usize, limit: f64 },

    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error(
        "Gram matrix is ill-conditioned (condition number {condition:.3e}); use a positive ridge"
    )]
    IllConditioned { condition: f64 },

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,

    #[error("infeasible box at index {index}: lower {lower} > upper {upper}")]
    InfeasibleBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("active-set solver did not converge after {iterations} iterations")]
    QpNotConverged { iterations: usize },

    #[error("target outside leg workspace: distance {distance:.6} m not in [{min:.6}, {max:.6}]")]
    OutOfWorkspace { distance: f64, min: f64, max: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: &'static str, detail: impl ToString) -> Self {
        Error::Malformed {
            what,
            detail: detail.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
