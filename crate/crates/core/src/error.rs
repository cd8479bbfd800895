use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    /// A data row failed validation. `row` is the 1-based line number in the
    /// source file (the header is line 1).
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },

    #[error("row {row}: duplicate key {key}")]
    DuplicateKey { row: u64, key: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("community {index} has internal weight {q} but population weight 0: chi-squared divergence is unbounded")]
    UnboundedDivergence { index: usize, q: f64 },

    #[error("no direct annotations for item `{item}`, group `{group}`")]
    NoDirectAnnotations { item: String, group: String },

    #[error("empty prediction pool for item `{item}`, group `{group}`, estimator `{estimator}`")]
    EmptyPool {
        item: String,
        group: String,
        estimator: String,
    },

    #[error("empty join: {0}")]
    EmptyJoin(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("identity violated: {0}")]
    Identity(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
