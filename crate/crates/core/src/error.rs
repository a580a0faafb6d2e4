use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}: line {line}: {message}")]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("request {request} can never be served: {reason}")]
    Infeasible { request: u64, reason: String },

    #[error("operator mapping error: {0}")]
    Mapping(String),

    #[error("dependency cycle detected among {0} operators")]
    Cycle(usize),

    #[error("graph node {node} references unknown device {device}")]
    UnknownDevice { node: usize, device: usize },
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
