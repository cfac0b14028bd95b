use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("both boxes are degenerate (zero area)")]
    DegenerateBoxes,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing sketch pattern for category `{category}` (expected {path})")]
    MissingSketch { category: String, path: PathBuf },

    #[error("no pattern available for label `{0}`")]
    MissingPattern(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("misaligned branch pairing: {0}")]
    Misaligned(String),

    #[error("evaluation point too close to a non-smooth kink (margin {margin:.3e} < {required:.3e}): {reason}")]
    NearKink {
        margin: f64,
        required: f64,
        reason: &'static str,
    },

    #[error("optimization diverged at iteration {iteration}: loss rose from {from:.6e} to {to:.6e} over {window} iterations")]
    Diverged {
        iteration: usize,
        from: f64,
        to: f64,
        window: usize,
    },

    #[error("buffer layout mismatch: {0}")]
    Layout(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
