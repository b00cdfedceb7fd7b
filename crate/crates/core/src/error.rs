use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("mine footprint out of bounds: {0}")]
    OutOfBounds(String),

    #[error("time step {t} outside 1..={max}")]
    TimeStep { t: usize, max: usize },

    #[error("non-finite value during {stage} at step {step}")]
    NonFinite { stage: &'static str, step: usize },

    #[error("training diverged at step {step}: loss {loss} > {limit}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("feature dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("infinite SNR: image has zero pixel deviation")]
    InfiniteSnr,

    #[error("SNR undefined for non-positive mean intensity {0}")]
    NonPositiveSignal(f64),

    #[error("IoU undefined: both masks are empty")]
    EmptyIou,

    #[error("undefined precision: no predictions at this threshold")]
    UndefinedPrecision,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing report field: {0}")]
    MissingField(String),

    #[error("experiment stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
