use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// A record violates a data invariant. `record` names the utterance or
    /// object involved.
    #[error("{path}: {record}: {message}")]
    Data {
        path: PathBuf,
        record: String,
        message: String,
    },

    #[error("utterance {utterance}: dangling object reference {object:?}")]
    DanglingObject { utterance: String, object: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ground-truth labels missing: {0}")]
    MissingLabels(String),

    #[error("segmentation does not tile utterance {utterance}: {message}")]
    Tiling { utterance: String, message: String },

    #[error("utterance {utterance} has {frames} frames, above the configured maximum {max}")]
    UtteranceTooLong {
        utterance: String,
        frames: usize,
        max: usize,
    },

    #[error("instance exceeds enumeration caps: {0}")]
    EnumerationCap(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(
        path: impl Into<PathBuf>,
        record: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Data {
            path: path.into(),
            record: record.into(),
            message: message.into(),
        }
    }
}
