//! Library side of the `cdssm` command-line tool: configuration, the model
//! zoo, file formats and the four subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;
pub mod models;

use std::fmt;

pub use config::RunConfig;

/// Failure of a command, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Degenerate(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Degenerate(m) => write!(f, "numerical degeneracy: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cdssm::Error> for CliError {
    fn from(e: cdssm::Error) -> Self {
        match e {
            cdssm::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Degenerate(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
