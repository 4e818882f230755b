use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed json: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing file `{}`", path.display())]
    MissingFile { path: PathBuf },

    #[error("blob `{blob}` failed checksum verification")]
    Checksum { blob: String },

    #[error("invalid {field}: {reason}")]
    Invariant { field: String, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("camera origin lies outside skybox layer {layer}")]
    CameraOutside { layer: usize },

    #[error("non-finite {term} loss on view {view}")]
    NonFiniteLoss { term: &'static str, view: usize },

    #[error("charts do not fit the {resolution}x{resolution} atlas with {padding}-texel padding; at least {required}x{required} texels are required")]
    AtlasPacking {
        resolution: u32,
        padding: u32,
        required: u32,
    },

    #[error("unsupported {what} version {found} (this build reads major version {supported})")]
    Version {
        what: &'static str,
        found: String,
        supported: u64,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("image: {0}")]
    Image(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn invariant(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn dimension(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}
