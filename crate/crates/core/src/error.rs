use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?} but got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: extent {extent} along {axis} is odd; pad to an even size first")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },

    #[error("shape {shape:?} does not support {requested} pyramid levels (maximum legal level is {max_level})")]
    PyramidLevel {
        shape: Vec<usize>,
        requested: usize,
        max_level: usize,
    },

    #[error("malformed pyramid: {0}")]
    MalformedPyramid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("config error on line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
