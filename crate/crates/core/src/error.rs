use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible descriptors: expected {expected} bits, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("descriptor length must be positive")]
    EmptyDescriptor,

    #[error("cannot concatenate an empty list of descriptors")]
    EmptyConcat,

    #[error("invalid cue spec: {0}")]
    InvalidSpec(String),

    #[error("cue value {value} outside [0, 1); normalize first")]
    CueOutOfRange { value: f64 },

    #[error("non-finite cue value {0}")]
    NonFiniteCue(f64),

    #[error("selector index {index} out of range for cardinality {cardinality}")]
    SelectorOutOfRange { index: u32, cardinality: u32 },

    #[error("cue arity mismatch: schema has {expected} cues, got {found} values")]
    CueArity { expected: usize, found: usize },

    #[error("cue '{name}' expects a {expected} value")]
    CueKind { name: String, expected: &'static str },

    #[error("pixel ({u}, {v}) outside {width}x{height} lookup table")]
    PixelOutOfBounds {
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },

    #[error("image '{0}' is already in the index")]
    DuplicateImage(String),

    #[error("unknown image id '{0}'")]
    UnknownImage(String),

    #[error("not enough training descriptors: need at least {needed}, got {got}")]
    TooFewDescriptors { needed: usize, got: usize },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }
}
