use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stream I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("{malformed} of {records} records are malformed; is --format correct?")]
    Format { records: usize, malformed: usize },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("missing {artifact}; run the `{stage}` stage first")]
    Dependency { stage: &'static str, artifact: PathBuf },

    #[error("training diverged at epoch {epoch} (non-finite loss); try a lower learning_rate")]
    Divergence { epoch: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{tags} tags do not align with {tokens} tokens")]
    Alignment { tags: usize, tokens: usize },

    #[error("all response tokens are stopwords")]
    DegenerateDistribution,

    #[error("normalization statistics missing; compute signals before building weak labels")]
    MissingStats,

    #[error("workspace is locked by another invocation ({0}); remove the lock file if stale")]
    Locked(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Format { .. } | Error::Alignment { .. } => 2,
            Error::Dependency { .. } | Error::MissingStats => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
