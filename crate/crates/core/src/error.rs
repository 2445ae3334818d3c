// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature {feature} has no observed entries")]
    FullyMissingFeature { feature: usize },

    #[error("no missing entries; metric is undefined")]
    NoMissingEntries,

    #[error("invalid network spec: {0}")]
    Network(String),

    #[error("{method}: non-finite {loss} at epoch {epoch}, batch {batch}")]
    Diverged {
        method: &'static str,
        loss: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("expected {expected} values, found {found} in {}", path.display())]
    ElementCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("grid cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    ) -> Self {
        Error::Shape {
            context,
            expected,
            found,
        }
    }

    /// True when the failure came from a diverging training run, possibly nested in a grid cell.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::Cell { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    /// True for malformed or inconsistent input data, possibly nested in a grid cell.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Shape { .. }
            | Error::NonFinite(_)
            | Error::FullyMissingFeature { .. }
            | Error::ElementCount { .. }
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Io(_) => true,
            Error::Cell { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
