use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed link strings, bad option values, invalid component counts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the domain of the link or its conjugate.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("matrix format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("model bundle error: {0}")]
    Bundle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("singular metric: smallest eigenvalue {min_eig:e} below tolerance (largest {max_eig:e})")]
    SingularMetric { min_eig: f64, max_eig: f64 },

    #[error("rank-deficient input: pivot {pivot:e} in column {column} below tolerance {tol:e}")]
    Rank { column: usize, pivot: f64, tol: f64 },

    #[error("fit diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("encode failed: {0}")]
    Encode(String),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Domain(_)
            | Error::Shape(_)
            | Error::EmptyDataset
            | Error::Format { .. }
            | Error::Bundle(_)
            | Error::Io { .. } => 3,
            Error::SingularMetric { .. }
            | Error::Rank { .. }
            | Error::Diverged { .. }
            | Error::Encode(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
