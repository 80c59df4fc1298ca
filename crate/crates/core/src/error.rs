use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("corrupt data in {} at byte offset {offset}: {reason}", path.display())]
    CorruptData { path: PathBuf, offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = QnnError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(QnnError::InvalidArgument(msg.into()))
}
