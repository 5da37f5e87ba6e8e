use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PieError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PieError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("header does not match schema (missing: [{}], extra: [{}])", missing.join(", "), extra.join(", "))]
    HeaderMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("non-numeric value {value:?} at row {row}, column {column}")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown category {value:?} at row {row}, column {column}")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dataset has no target column")]
    MissingTarget,

    #[error("categorical column {0:?} must be one-hot encoded before fitting")]
    NotEncoded(String),

    #[error("column mismatch (missing: [{}], extra: [{}])", missing.join(", "), extra.join(", "))]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective became non-finite at iteration {iteration}: {detail}")]
    NonFiniteObjective { iteration: usize, detail: String },

    #[error("undefined RPE: target is constant on the evaluation set")]
    UndefinedRpe,

    #[error("pi-score undefined: {0}")]
    UndefinedPiScore(String),

    #[error("model file parse error: {0}")]
    ModelParse(String),

    #[error("unsupported model format version {found:?} (supported: {})", supported.join(", "))]
    VersionMismatch {
        found: String,
        supported: Vec<String>,
    },

    #[error("model checksum mismatch (stored {stored}, computed {computed})")]
    Checksum { stored: String, computed: String },
}

impl PieError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PieError::Io {
            path: path.into(),
            source,
        }
    }
}
