use thiserror::Error;

/// Shape pair `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: left {left:?}, right {right:?}")]
    DimMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: matrix is not square ({rows}x{cols})")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { op: &'static str, asymmetry: f64 },

    #[error("{op}: need at least {needed} rows, got {got}")]
    TooFewRows {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("coupling width must be even, got {0}")]
    OddWidth(usize),

    #[error("stale or mismatched cache in {op}: {detail}")]
    CacheMismatch { op: &'static str, detail: String },

    #[error("task {task}: {detail}")]
    Task { task: usize, detail: String },

    #[error("alignment needs at least 2 latent sets, got {0}")]
    TooFewTasks(usize),

    #[error("spectrum is entirely zero")]
    ZeroSpectrum,

    #[error("all sampled pairs were coincident")]
    DegenerateSample,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            detail: err.to_string(),
        }
    }
}
