use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the estimators and the experiment harness.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite entry at index {index} of the query vector")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension below schedule: operator has dimension {dim} but the sketch needs width {width}")]
    DimensionBelowSchedule { dim: usize, width: usize },

    #[error("budget too small: {reason}")]
    Budget { reason: String },

    #[error("empty stream")]
    EmptyStream,

    #[error("stream step {step} has dimension {actual}, expected {expected}")]
    StreamDimension { step: usize, expected: usize, actual: usize },

    #[error("tree table is missing node (level {level}, index {index})")]
    MissingNode { level: u32, index: usize },

    #[error("vertex {vertex} out of range for a graph with {nodes} nodes")]
    VertexOutOfRange { vertex: usize, nodes: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("estimator `{label}`: {source}")]
    Estimator {
        label: String,
        #[source]
        source: Box<TraceError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TraceError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> TraceError {
    TraceError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Checks that `value` lies in the open interval (0, 1).
pub(crate) fn check_unit_open(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{value} is outside (0, 1)")))
    }
}

/// Checks that `p` lies in the closed interval [1, 2].
pub(crate) fn check_schatten_p(p: f64) -> Result<()> {
    if p.is_finite() && (1.0..=2.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid("p", format!("{p} is outside [1, 2]")))
    }
}
