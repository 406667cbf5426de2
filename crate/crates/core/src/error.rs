use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("root joint {0} is invalid")]
    InvalidRoot(usize),

    #[error("point projects behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("camera fit is underdetermined: {found} correspondences, need at least {required}")]
    Underdetermined { found: usize, required: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("not enough frames: {0}")]
    TooFewFrames(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    /// Stable machine-readable code used by the CLI and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::Config(_) => "E_CONFIG",
            Error::Schema(_) => "E_SCHEMA",
            Error::InvalidRoot(_) => "E_INVALID_ROOT",
            Error::BehindCamera(_) => "E_BEHIND_CAMERA",
            Error::Underdetermined { .. } => "E_UNDERDETERMINED",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::TooFewFrames(_) => "E_TOO_FEW_FRAMES",
            Error::Empty(_) => "E_EMPTY",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Png(_) => "E_PNG",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
