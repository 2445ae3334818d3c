// SPDX-License-Identifier: Apache-2.0

//! Library side of the `igani` command: configuration, commands and plots.

pub mod commands;
pub mod config;
pub mod plot;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

pub use commands::{impute_matrix, GridOptions, GridOutcome};
pub use config::ExperimentConfig;

/// Failure with a stable process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or incompatible input (exit 2).
    Invalid(String),
    /// Malformed or inconsistent data (exit 3).
    Data(String),
    /// Non-finite training loss (exit 4).
    Diverged(String),
    /// Anything else (exit 1).
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<igani_core::Error> for CliError {
    fn from(e: igani_core::Error) -> Self {
        if e.is_divergence() {
            CliError::Diverged(e.to_string())
        } else if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Other(e.into())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Other(e.error.into()))?;
    Ok(())
}
