use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the pipeline.
///
/// [`Error::exit_code`] groups them into the CLI's exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not draw {wanted} negatives for concept '{concept}'")]
    NegativeSampling { concept: String, wanted: usize },

    #[error("split: {0}")]
    Split(String),

    #[error("outlier benchmark for property '{property}': {msg}")]
    Unsatisfiable { property: String, msg: String },

    #[error("checkpoint format: {0}")]
    CheckpointVersion(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("affinity propagation found no exemplar after {iters} iterations; try a higher preference")]
    NoExemplars { iters: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 = usage or input, 3 = state mismatch, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CheckpointVersion(_) | Error::VocabMismatch(_) => 3,
            Error::Degenerate(_) | Error::NonFinite(_) | Error::NoExemplars { .. } => 4,
            _ => 2,
        }
    }
}
