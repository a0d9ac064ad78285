use std::io;

use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("instrument matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("projection diagonal is numerically one at observation {index} (1 - P_ii = {gap:e})")]
    Singularity { index: usize, gap: f64 },

    #[error("denominator quadratic form vanishes at the evaluation point")]
    DegenerateResidual,

    #[error("eigenvector normalization failed: first component {0:e} is too small")]
    Normalization(f64),

    #[error("ill-conditioned {0}")]
    Conditioning(String),

    #[error("restricted fixed point did not converge after {} iterations", .trajectory.len())]
    NonConvergence { trajectory: Vec<f64> },

    #[error("cross-fit weight denominator vanishes at ({row}, {col})")]
    CrossFitDegeneracy { row: usize, col: usize },

    #[error("AR variance estimate is not positive ({0:e})")]
    VarianceDegeneracy(f64),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("quadrature did not reach the accuracy target (achieved bound {achieved:e})")]
    Precision { achieved: f64 },

    #[error("invalid experiment spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Singularity { .. } => "singularity",
            Error::DegenerateResidual => "degenerate_residual",
            Error::Normalization(_) => "normalization",
            Error::Conditioning(_) => "conditioning",
            Error::NonConvergence { .. } => "nonconvergence",
            Error::CrossFitDegeneracy { .. } => "crossfit_degeneracy",
            Error::VarianceDegeneracy(_) => "variance_degeneracy",
            Error::Usage(_) => "usage",
            Error::Precision { .. } => "precision",
            Error::Spec(_) => "spec",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// True for errors caused by user input rather than numerical trouble.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::RankDeficient { .. }
                | Error::Usage(_)
                | Error::Spec(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
