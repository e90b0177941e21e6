//! Orchestration for the attack bench: config parsing, stage commands, and
//! reproducible run manifests. The binary is a thin wrapper over this crate.

pub mod commands;
pub mod config;
pub mod manifest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {artifact} (run `fakebench {produced_by}` first)")]
    MissingPrerequisite { artifact: String, produced_by: String },
    #[error("stage failed: {0}")]
    Stage(String),
}

impl CliError {
    /// Process exit code: 2 for config errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingPrerequisite { .. } | CliError::Stage(_) => 3,
        }
    }
}

pub(crate) fn stage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Stage(e.to_string())
}
