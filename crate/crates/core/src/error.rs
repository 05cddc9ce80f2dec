use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while validating an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub file: PathBuf,
    /// 1-based line number; 0 when the issue is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}: {}", self.file.display(), self.message)
        } else {
            write!(f, "{}:{}: {}", self.file.display(), self.line, self.message)
        }
    }
}

/// Every issue found in one ingestion pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn push(&mut self, file: impl Into<PathBuf>, line: usize, message: impl Into<String>) {
        self.issues.push(Issue {
            file: file.into(),
            line,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation issue(s)", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(ValidationReport),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown fine-grained class `{0}`")]
    UnknownClass(String),

    #[error("no embedding stored for entity `{0}`")]
    MissingEmbedding(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient pool: {0}")]
    InsufficientPool(String),

    #[error("entity `{entity}` has no sentences and name fallback is disabled")]
    NoSentences { entity: String },

    #[error("provider failure{}: {source}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Provider {
        context: Option<String>,
        #[source]
        source: ProviderError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn provider_in(context: impl Into<String>, source: ProviderError) -> Self {
        Error::Provider {
            context: Some(context.into()),
            source,
        }
    }
}

impl From<ProviderError> for Error {
    fn from(source: ProviderError) -> Self {
        Error::Provider {
            context: None,
            source,
        }
    }
}
