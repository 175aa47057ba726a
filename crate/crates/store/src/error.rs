use std::io;

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    /// A file's digest does not match the manifest.
    #[error("integrity check failed for {file}")]
    Integrity { file: String },
    #[error("malformed {file}: {message}")]
    Format { file: String, message: String },
    /// Components that disagree with each other (lengths, ids, grids).
    #[error("inconsistent bundle: {0}")]
    Consistency(String),
    #[error(transparent)]
    Core(#[from] advx_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        StoreError::Format {
            file: file.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
