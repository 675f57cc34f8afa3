use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),

    #[error("malformed PLY body: {0}")]
    MalformedBody(String),

    #[error("missing vertex attribute `{0}`")]
    MissingAttribute(String),

    #[error("coordinate {value} out of range for bit depth {bitdepth}")]
    CoordinateOutOfRange { value: i64, bitdepth: u8 },

    #[error("duplicate point at {0:?}")]
    DuplicatePoint([u32; 3]),

    #[error("color value {0} outside [0, 255]")]
    ColorOutOfRange(f64),

    #[error("expected color space {expected:?}, found {found:?}")]
    WrongColorSpace {
        expected: crate::cloud::ColorSpace,
        found: crate::cloud::ColorSpace,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("point {0:?} of the subtrahend is not present in the source cloud")]
    NotSubset([u32; 3]),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("symbol has zero frequency")]
    ZeroFrequency,

    #[error("zero probability in rate estimate")]
    ZeroProbability,

    #[error("truncated stream: {0}")]
    TruncatedStream(String),

    #[error("corrupt chunk: {0}")]
    CorruptChunk(String),

    #[error("model hash mismatch: stream expects {expected:016x}, model is {found:016x}")]
    HashMismatch { expected: u64, found: u64 },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("loss became non-finite at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("RD curve needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("RD curves do not overlap")]
    EmptyOverlap,

    #[error("malformed report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: &std::path::Path, e: csv::Error) -> Self {
        if !e.is_io_error() {
            return Error::Report(format!("{}: {e}", path.display()));
        }
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            kind => Error::Report(format!("{}: {kind:?}", path.display())),
        }
    }
}
