use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("invalid relation schema: {0}")]
    Schema(String),

    #[error("record {index}: {message}")]
    Format { index: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("predictions cover {predicted} sentences but gold covers {gold}")]
    Alignment { predicted: usize, gold: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: {stage} loss is not finite")]
    Diverged { epoch: usize, stage: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration, 3 for data, 4 for runtime
    /// failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::UnknownRelation(_)
            | Error::Schema(_)
            | Error::Format { .. }
            | Error::Data(_)
            | Error::Alignment { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Json(_) => 3,
            Error::Shape(_) | Error::Diverged { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
