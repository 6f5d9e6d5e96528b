use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("taxonomy error in {path:?}: {message}")]
    TaxonomyFormat {
        path: Option<PathBuf>,
        message: String,
    },

    #[error("column `{0}` named in schema is missing from the CSV header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column `{column}`: value {value} outside domain [{lower}, {upper}]")]
    OutOfBounds {
        row: usize,
        column: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("unknown taxonomy label `{0}`")]
    UnknownLabel(String),

    #[error("attribute `{attribute}`: invalid domain [{lower}, {upper}]")]
    InvalidBounds {
        attribute: String,
        lower: f64,
        upper: f64,
    },

    #[error("invalid cluster size k={k} for n={n} records")]
    InvalidK { k: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("attribute `{attribute}` is not supported here: {reason}")]
    Unsupported { attribute: String, reason: String },
}
