use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid saliency values: {0}")]
    InvalidSaliency(String),

    #[error("architecture {0} requires a feature map")]
    MissingFeatures(u8),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} ({id}): {source}")]
    Stage {
        stage: &'static str,
        id: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a sample id to an error raised while processing a dataset item.
    pub fn in_sample(self, id: impl ToString) -> Self {
        Error::Sample {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Attach a pipeline stage and patch id.
    pub fn in_stage(self, stage: &'static str, id: impl ToString) -> Self {
        Error::Stage {
            stage,
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}
