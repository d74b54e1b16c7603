use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown fusion mode `{0}` (expected one of cag_dde, cag_only, dde_only, concat, add, mul)")]
    UnknownFusionMode(String),

    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(f64),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dataset at {0} contains no sequences")]
    EmptyDataset(PathBuf),

    #[error("sequence `{sequence}` frame {frame}: {message}")]
    Frame {
        sequence: String,
        frame: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
