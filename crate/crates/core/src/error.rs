use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("no entries")]
    NoEntries,

    #[error("no species retained at minimum prevalence {0}")]
    NoSpeciesRetained(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {0} MAP replicates failed")]
    AllReplicatesFailed(usize),

    #[error("E[Omega^T Omega] is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("smallest lambda leaves species with no nonzero loading: {0:?}")]
    EmptyRows(Vec<usize>),

    #[error("filter '{filter}' leaves no candidates for factor {factor}")]
    NoCandidates { filter: String, factor: usize },

    #[error("empty cluster {0}")]
    EmptyCluster(usize),

    #[error("filter '{0}' unavailable: {1}")]
    FilterUnavailable(String, String),

    #[error("at least {needed} posterior draws required, found {found}")]
    TooFewDraws { needed: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
