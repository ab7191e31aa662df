use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("invalid link {src}->{dst}: {message}")]
    InvalidLink { src: u32, dst: u32, message: String },

    #[error("disconnected path at hop {hop}: link ends at {expected} but next starts at {found}")]
    DisconnectedPath { hop: usize, expected: u32, found: u32 },

    #[error("node {0} is not a satellite")]
    NotASatellite(u32),

    #[error("no feasible action")]
    NoAction,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot aggregate heterogeneous reports: {0}")]
    Aggregation(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
