//! Command-line front end: configuration, subcommands and reproducible
//! output directories.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run, Command, RunOptions};
pub use config::{load_config, Config};
pub use output::{Artifacts, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] borrowkit::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sampler did not converge; diagnostics written to {0}")]
    NotConverged(PathBuf),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(borrowkit::Error::Convergence { .. }) | CliError::NotConverged(_) => 3,
            CliError::Core(
                borrowkit::Error::Schema(_)
                | borrowkit::Error::Formula(_)
                | borrowkit::Error::InvalidArgument(_)
                | borrowkit::Error::Io { .. },
            ) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(borrowkit::Error::Convergence { .. }) | CliError::NotConverged(_) => "convergence",
            CliError::Core(_) => "runtime",
            CliError::Io { .. } => "io",
        }
    }

    /// Structured error report for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }
        })
        .to_string()
    }
}
