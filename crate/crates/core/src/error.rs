use thiserror::Error;

/// Errors raised by the geometry, labeling, fitting and I/O layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("box size must be positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("2D box height must be positive, got {0}")]
    NonPositiveHeight(f64),
    #[error("corner {corner} lies behind the camera (Z = {z})")]
    BehindCamera { corner: usize, z: f64 },
    #[error("timestamps must be strictly increasing (track {track}, frame {frame})")]
    NonIncreasingTime { track: usize, frame: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no prior size for class `{0}`")]
    MissingPrior(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing calibration key `{0}`")]
    MissingKey(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
