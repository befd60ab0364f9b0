use std::path::PathBuf;

use simprune::algo::AlgoError;
use simprune::data::DataError;
use simprune::net::NetError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
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
    #[error("comparison: {0}")]
    Compare(String),
}

impl HarnessError {
    /// Process exit status: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Compare(_) => 1,
            HarnessError::Numerical(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Csv { path, source }
    }
}

impl From<NetError> for HarnessError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFinite { .. } => HarnessError::Numerical(e.to_string()),
            other => HarnessError::Usage(other.to_string()),
        }
    }
}

impl From<AlgoError> for HarnessError {
    fn from(e: AlgoError) -> Self {
        match e {
            AlgoError::Config(msg) => HarnessError::Usage(msg),
            AlgoError::Observer { source, step } => match source.downcast::<HarnessError>() {
                Ok(inner) => *inner,
                Err(other) => HarnessError::Numerical(format!("pruning step {step}: {other}")),
            },
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}
