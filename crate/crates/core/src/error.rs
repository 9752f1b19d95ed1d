use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schema violation at row {row}, column `{column}`: {message}")]
    SchemaViolation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error at row {row}, column `{column}`: cannot read `{token}` as a number")]
    Parse {
        row: usize,
        column: String,
        token: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("correlation matrix is not positive semi-definite (jitter up to {max_jitter:e} failed)")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("categorical perturbation unavailable: dataset has no categorical columns")]
    EmptyEnvelope,

    #[error("level `{level}` of column `{column}` is never observed; its mean response is undefined")]
    UnobservedLevel { column: String, level: String },

    #[error("response column required: {0}")]
    MissingResponse(String),

    #[error("scoring error in batch {batch}: {message}")]
    Scoring { batch: usize, message: String },

    #[error("non-deterministic scorer: probe row {row} scored {first} then {second}")]
    NonDeterministic { row: usize, first: f64, second: f64 },

    #[error("AUC undefined: response contains a single class")]
    SingleClass,

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
