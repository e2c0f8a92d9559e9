use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing {modality} file for sample `{sample_id}`: {path}")]
    MissingFile {
        sample_id: String,
        modality: String,
        path: PathBuf,
    },

    #[error("unknown gender token `{0}` (expected A or B)")]
    UnknownGender(String),

    #[error("unknown modality token `{0}`")]
    UnknownModality(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("unknown sample `{0}`")]
    UnknownSample(String),

    #[error("missing {modality} embedding for sample `{sample_id}`")]
    MissingEmbedding { sample_id: String, modality: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("media error: {0}")]
    Media(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
