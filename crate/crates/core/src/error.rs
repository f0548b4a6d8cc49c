use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: String,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("image format error: {0}")]
    Format(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("bundle is corrupt: {0}")]
    Corrupt(String),

    #[error("unsupported bundle version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFinite { param: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            context: context.into(),
            left,
            right,
        }
    }

    /// Prefix a shape error's context, leaving other variants untouched.
    pub(crate) fn within(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::Shape { context, left, right } => Error::Shape {
                context: format!("{outer}: {context}"),
                left,
                right,
            },
            other => other,
        }
    }
}
