use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("expected {expected} channel(s), got {actual}")]
    ChannelCount { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate grid: window sum below floor at sample {0}")]
    DegenerateGrid(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-unit direction (norm {0})")]
    NonUnitDirection(f64),

    #[error("unsupported SH degree {0} (0..=3 supported)")]
    UnsupportedDegree(u32),

    #[error("length mismatch between coefficients ({coeffs}) and basis ({basis})")]
    CoeffLength { coeffs: usize, basis: usize },

    #[error("non-unit quaternion (norm {0})")]
    NonUnitQuaternion(f64),

    #[error("angle {0} out of range [0, pi]")]
    AngleOutOfRange(f64),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss at bin (f={f}, t={t})")]
    NonFiniteLoss { f: usize, t: usize },

    #[error("undefined LRE: zero-energy channel")]
    UndefinedLre,

    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed wav {path}: {message}")]
    MalformedWav { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    PoseParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown pose id `{id}` (available: {available})")]
    UnknownPose { id: String, available: String },

    #[error("missing audio for pose `{0}`")]
    MissingAudio(String),

    #[error("coincident source and receiver")]
    Coincident,

    #[error("empty scene: no training targets")]
    EmptyScene,

    #[error("config parse error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
