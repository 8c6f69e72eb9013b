use std::path::PathBuf;

use thiserror::Error;

use crate::enclave::EnclaveError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("time {t} outside trace range [{start}, {end})")]
    OutOfRange { t: i64, start: i64, end: i64 },

    #[error("unknown volunteer {node_id} (encoder knows {num_nodes} nodes)")]
    UnknownVolunteer { node_id: usize, num_nodes: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("no eligible node for workflow {workflow_id}")]
    NoEligibleNode { workflow_id: u64 },

    #[error("invalid k = {k} for {points} points")]
    InvalidK { k: usize, points: usize },

    #[error(transparent)]
    Enclave(#[from] EnclaveError),

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// Usage and configuration problems exit with 1, everything else with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ConfigLine { .. }
            | Error::MissingKey(_)
            | Error::WouldOverwrite(_) => 1,
            _ => 2,
        }
    }
}
