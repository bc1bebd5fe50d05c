use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("release index {index} has no following release (corpus has {releases} releases)")]
    Index { index: usize, releases: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lex error at byte {offset}: {message}")]
    Lex { offset: usize, message: String },

    #[error("unbalanced braces at file scope near byte {offset}")]
    Structure { offset: usize },

    #[error("function has no tokens")]
    EmptyFunction,

    #[error("no training sequences")]
    EmptyCorpus,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step}")]
    Numerical { step: usize },

    #[error("checkpoint version error: {0}")]
    Version(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("no ground-truth label for component {0}")]
    MissingLabel(String),

    #[error("classifier training data contains a single class")]
    DegenerateLabels,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by the pipeline itself.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Numerical { .. })
    }
}
