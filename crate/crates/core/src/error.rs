use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("phrase index {index}: {reason}")]
    InvalidPhrase { index: u32, reason: String },

    #[error("duplicate phrase index {0}")]
    DuplicateIndex(u32),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no structure found: the inference window has no key or key-value rows")]
    NoStructure,

    #[error("template mismatch: fields of the first template node never appear in the document")]
    TemplateMismatch,

    #[error("oracle failed on cluster {cluster}: {message}")]
    Oracle { cluster: usize, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input or configuration rather than by a pipeline stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidPhrase { .. }
                | Error::DuplicateIndex(_)
                | Error::InvalidTemplate(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::File { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
