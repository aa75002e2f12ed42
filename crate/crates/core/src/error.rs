use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },

    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("schema hash mismatch: checkpoint {expected}, dataset {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data { line: None, message: msg.into() }
    }

    pub fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data { line: Some(line), message: msg.into() }
    }

    pub fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable kind, used by the CLI error record and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Shape { .. } => "config",
            Error::Data { .. } => "data",
            Error::NonFinite(_) => "non_finite",
            Error::DegenerateBatch(_) => "degenerate_batch",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Checkpoint(_) => "checkpoint",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
