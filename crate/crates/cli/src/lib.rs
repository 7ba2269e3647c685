//! Operator surface of the laboratory: dataset generation, training,
//! evaluation, statistics and curve export.
//!
//! Every command is a plain function taking its resolved configuration, so
//! the binary, the integration tests and the acceptance harness share one
//! code path.

pub mod commands;
pub mod config;
pub mod eval;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] oryx::OryxError),

    /// Inputs for which a statistic is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Two artefacts that should describe the same setting do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: std::path::PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
