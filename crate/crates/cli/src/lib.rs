//! Batch front end for the learner: run configuration, the `run-stream`,
//! `retrieve`, `plan` and `eval` subcommands, and their on-disk artifacts.
//!
//! Failures carry their exit-code class: input and configuration problems
//! exit with 2, faults while running exit with 1.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{cmd_eval, cmd_plan, cmd_retrieve, cmd_run_stream, EvalReport, RetrieveOutput};
pub use config::{CorpusSource, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Input(anyhow::Error),
    /// Anything that goes wrong after inputs were accepted.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Tags a fallible result with its exit-code class.
pub trait Classify<T> {
    fn input(self, what: impl fmt::Display) -> CliResult<T>;
    fn runtime(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::Input(e.into().context(what.to_string())))
    }

    fn runtime(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into().context(what.to_string())))
    }
}
