//! Library behind the `s2fp8` command-line tool: experiment configuration,
//! dataset generation and IDX ingestion, the experiment runner with its CSV
//! and JSON outputs, and the report formatters for the CLI subcommands.

pub mod checkgrad;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod formats_table;
pub mod idx;
pub mod quantize;

use thiserror::Error;

/// CLI-facing error split by exit code: configuration and usage problems
/// exit 1, I/O and parse problems exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> CliError {
        CliError::Io(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<s2fp8_core::tensor::TensorError> for CliError {
    fn from(e: s2fp8_core::tensor::TensorError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<s2fp8_core::codec::CodecError> for CliError {
    fn from(e: s2fp8_core::codec::CodecError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<s2fp8_core::formats::FormatError> for CliError {
    fn from(e: s2fp8_core::formats::FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<s2fp8_core::nn::TrainError> for CliError {
    fn from(e: s2fp8_core::nn::TrainError) -> Self {
        match e {
            s2fp8_core::nn::TrainError::Config(msg) => CliError::Config(msg),
            other => CliError::Io(other.to_string()),
        }
    }
}
