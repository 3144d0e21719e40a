use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the federation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The declared schema and the data (or another schema) disagree.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed as the declared column type.
    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A categorical value was never announced in the metadata round.
    #[error("encoding error in column '{column}': value '{value}' is not in the global vocabulary")]
    UnknownCategory { column: String, value: String },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}
