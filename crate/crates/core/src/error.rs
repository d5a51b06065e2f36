use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("graph is not regular (degrees range {min}..={max}); use metropolis weights")]
    NotRegular { min: usize, max: usize },

    #[error("graph is not connected ({components} components)")]
    NotConnected { components: usize },

    #[error("matrix validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("operation requires a {required} environment")]
    UnsupportedKind { required: &'static str },

    #[error("sensitivity grid is miscalibrated: multiplier mean {mean} != 1")]
    Calibration { mean: f64 },

    #[error("no performative stable point: eps_avg = {eps_avg} >= threshold {threshold}")]
    NoFixedPoint { eps_avg: f64, threshold: f64 },

    #[error("stability condition violated: eps_avg = {eps_avg} must be < mu/((1+delta)L) = {bound}")]
    StabilityViolated { eps_avg: f64, bound: f64 },

    #[error("theory constants inapplicable: {0}")]
    Inapplicable(String),

    #[error("step index must start at 1, got t = {0}")]
    StepIndex(u64),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error at {path}:{line}: {msg}")]
    Dataset {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset too small: need {required} rows, have {available}")]
    InsufficientRows { required: usize, available: usize },

    #[error("rate fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
