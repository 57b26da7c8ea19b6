use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    FitNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("fit failed at grid point q = {q}: {source}")]
    GridFit {
        q: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("constraint infeasible: {0}")]
    Infeasible(String),

    #[error("episode {episode}, step {step}: {source}")]
    Episode {
        episode: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn in_episode(self, episode: usize, step: usize) -> Self {
        Error::Episode {
            episode,
            step,
            source: Box::new(self),
        }
    }
}
