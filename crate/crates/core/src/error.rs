use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("gradient contains a non-finite value in `{0}`")]
    NonFiniteGradient(String),
    #[error("vector of length {0} is too short to form a quaternion")]
    InsufficientDims(usize),
    #[error("quaternion is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("matrix is not a proper rotation: {0}")]
    NotRotation(String),
    #[error("head dimension {0} is not divisible by 4")]
    HeadDimNotQuaternion(usize),
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("audio has {have} frames but {need} are required")]
    AudioTooShort { have: usize, need: usize },
    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("motion beat timeline is empty")]
    EmptyMotionBeats,
    #[error("music beat timeline is empty")]
    EmptyMusicBeats,
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("metadata mismatch for {path}: {reason}")]
    MetaMismatch { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::DimensionMismatch(msg.into()))
}
