use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the data pipeline, network, and training harness.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode/encode error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid label value {value} at ({row}, {col}); labels must be 0 or 1")]
    InvalidLabel { value: u16, row: usize, col: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("singular kriging system: duplicate sample coordinates at ({x0}, {y0}) and ({x1}, {y1})")]
    DuplicateSamples { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("variogram fit is not positive definite: {0}")]
    BadVariogram(String),

    #[error("kriging system solve failed: {0}")]
    SingularSystem(String),

    #[error("no {class} anchor candidates in batch")]
    NoCandidates { class: &'static str },

    #[error("queue underfilled: {have} real keys, need {need}")]
    QueueUnderfilled { have: usize, need: usize },

    #[error("cannot enqueue {k} keys into a queue of length {l}")]
    QueueOverflow { k: usize, l: usize },

    #[error("layer '{name}' not found; valid layers: {valid}")]
    LayerNotFound { name: String, valid: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
