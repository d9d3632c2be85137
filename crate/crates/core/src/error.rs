use std::path::PathBuf;

/// Errors raised by the library. Contract violations (wrong color space,
/// mismatched dimensions, degenerate inputs) are reported eagerly rather
/// than silently coerced.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expected {expected} image, got {got}")]
    WrongColorSpace { expected: &'static str, got: &'static str },

    #[error("image dimensions do not match: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-positive depth at pixel ({0}, {1})")]
    InvalidDepth(usize, usize),

    #[error("image {0}x{1} smaller than {2}x{2} window")]
    ImageTooSmall(usize, usize, usize),

    #[error("degenerate-zero-variance: score differences have zero spread")]
    DegenerateZeroVariance,

    #[error("singular covariance: scale below 1e-9")]
    SingularCovariance,

    #[error("pose history has {0} entries, need at least 2")]
    InsufficientHistory(usize),

    #[error("frame {frame}: expected class {expected}, got {got}")]
    FrameClassMismatch { frame: usize, expected: &'static str, got: &'static str },

    #[error("unknown keyframe index {0}")]
    UnknownKeyframe(usize),

    #[error("provider `{provider}` failed on frame {frame}: {message}")]
    Provider { provider: &'static str, frame: usize, message: String },

    #[error("non-finite loss at scale {scale}, iteration {iteration}: {detail}")]
    NonFiniteLoss { scale: usize, iteration: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
