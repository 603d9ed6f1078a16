use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: not a RIFF/WAVE file: {reason}")]
    NotWav { path: PathBuf, reason: String },

    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),

    #[error("expected mono audio, found {0} channels")]
    Multichannel(u16),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("transition matrix has no unique stationary distribution")]
    NonUniqueStationary,

    #[error("too few observations: {frames} frames for {states} states")]
    TooFewObservations { frames: usize, states: usize },

    #[error(transparent)]
    Decode(#[from] crate::features::DecodeError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
