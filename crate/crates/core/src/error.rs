//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A character outside the 62-character alphabet.
    #[error("character {0:?} is not in the alphabet [A-Za-z0-9]")]
    OutOfAlphabet(char),

    /// Numerical failure (non-finite values, rank deficiency, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Evaluation protocol violation (e.g. lexicon missing the ground truth).
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Malformed or inconsistent model archive.
    #[error("model archive: {0}")]
    Archive(String),

    /// Malformed corpus manifest or image file.
    #[error("corpus: {0}")]
    Corpus(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name for diagnostics.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
