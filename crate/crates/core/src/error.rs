use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CvlError>;

/// Every failure the library can report.
///
/// The CLI maps `Config` to exit code 1 and everything else to 2.
#[derive(Debug, Error)]
pub enum CvlError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index {index} out of range for size {len}")]
    Index { index: usize, len: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty description")]
    EmptyDescription,

    #[error("empty class: no text embeddings supplied")]
    EmptyClass,

    #[error("class bank incomplete: class {0} has no entries")]
    BankIncomplete(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error for {image_id}: {msg}")]
    Validation { image_id: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CvlError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CvlError::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CvlError::Io {
            path: path.into(),
            source,
        }
    }
}
