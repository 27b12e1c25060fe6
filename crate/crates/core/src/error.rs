use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Frame;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wrench is expressed in the {found:?} frame, expected {expected:?}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    /// The attachment candidate coincides with a fruit position, so the
    /// spring direction is undefined.
    #[error("model singularity: |r_O - r_a| = {distance:e} m at sample {sample}")]
    Singularity { sample: usize, distance: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("validation error at record {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("invalid trial: {0}")]
    InvalidTrial(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cost evaluation failed after {halvings} step halvings: {reason}")]
    EvaluationFailure { halvings: usize, reason: String },

    #[error("force cap of {force_cap} N not reached within the {pull_distance} m pull")]
    CapNotReached { force_cap: f64, pull_distance: f64 },

    #[error("grasp compliance equilibrium did not converge")]
    ComplianceDiverged,

    #[error("unknown plot kind `{0}`")]
    UnknownPlotKind(String),

    #[error("report is missing data for this operation: {0}")]
    MissingData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to I/O or numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Parse { .. }
                | Error::InvalidTrial(_)
                | Error::InvalidConfig(_)
                | Error::InsufficientSamples { .. }
                | Error::EmptyInput(_)
                | Error::FrameMismatch { .. }
                | Error::UnknownPlotKind(_)
                | Error::MissingData(_)
        )
    }
}
