use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: unsupported WAV format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("{path}: channel count {channels} != 1")]
    ChannelCount { path: PathBuf, channels: u16 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match model config: {0}")]
    CheckpointMismatch(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("non-finite loss at step {step}; last good checkpoint: {last_good}")]
    NonFiniteLoss { step: usize, last_good: String },

    #[error("signal too short: {0}")]
    TooShort(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
