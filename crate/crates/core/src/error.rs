use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the grading pipeline.
///
/// The variants follow the failure classes the pipeline distinguishes: a
/// wrong shape is a geometry problem, bad input values are data problems,
/// malformed files are format problems, and so on. The CLI maps these to
/// exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error in layer {layer}: {message}")]
    Numeric { layer: String, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! geometry {
    ($($arg:tt)*) => { $crate::error::Error::Geometry(format!($($arg)*)) };
}

macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}

pub(crate) use data_err;
pub(crate) use geometry;
