//! Experiment driver around `fligan-core`: configuration parsing, the
//! strategy x alpha x seed matrix runner with incremental persistence, and
//! report emission (plots and tables). The `fligan` binary is a thin clap
//! wrapper over this library.

pub mod config;
pub mod report;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fligan_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("report error: {0}")]
    Report(String),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
