use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by clip validation and the binary clip format.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClipError {
    #[error("feature dimension {found} \u{2260} 263")]
    Dimension { found: usize },
    #[error("clip has no frames")]
    Empty,
    #[error("non-finite value at frame {frame}, channel {channel}")]
    NonFinite { frame: usize, channel: usize },
    #[error("contact out of range: {value} at frame {frame}, channel {channel}")]
    ContactOutOfRange {
        frame: usize,
        channel: usize,
        value: f32,
    },
    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: usize, found: usize },
    #[error("bad clip magic")]
    BadMagic,
    #[error("unsupported clip format version {0}")]
    Version(u32),
    #[error("clip truncated: expected {expected} bytes of samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("clip io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ClipError {
    fn from(e: std::io::Error) -> Self {
        ClipError::Io(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestep {t} out of range 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("clip {id}: {source}")]
    CorpusClip { id: String, source: ClipError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("non-finite loss at step {step} (record {record})")]
    NonFiniteLoss { step: usize, record: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("unsupported checkpoint version {found} (reader supports {supported})")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("metric: {0}")]
    Metric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed metadata: {0}")]
    Metadata(String),
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
