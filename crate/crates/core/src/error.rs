use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("position ({x} μm, {y} μm) is outside the field grid")]
    OutOfBounds { x: f64, y: f64 },

    #[error("requested {requested} defects but only {available} are available")]
    Size { requested: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("model construction failed: {0}")]
    Construction(String),

    #[error("integration failed at t = {t} μs: {reason}")]
    Integration { t: f64, reason: String },

    #[error("unsupported initial state: {0}")]
    UnsupportedState(String),

    /// The decay is too slow to resolve on the simulated horizon; `lower_bound`
    /// is the smallest decay constant consistent with the trace.
    #[error("decay not resolved over the horizon (T > {lower_bound:.1} μs)")]
    UnresolvedDecay { lower_bound: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
