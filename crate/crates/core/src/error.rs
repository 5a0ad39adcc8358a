use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout infeasible: seed {seed} exhausted {attempts} placement attempts")]
    LayoutInfeasible { seed: u64, attempts: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("source occluded: no fluid cell within {radius} m of ({x}, {y})")]
    SourceOccluded { x: f64, y: f64, radius: f64 },

    #[error("solver failure at step {step} (t = {time:.6e} s), cell (i={i}, j={j}): {reason}")]
    SolverFailure {
        step: usize,
        time: f64,
        i: usize,
        j: usize,
        reason: String,
    },

    #[error("corrupt dataset at {path}: {reason}")]
    CorruptDataset { path: PathBuf, reason: String },

    #[error("degenerate normalization: p_min = p_max = {0}")]
    DegenerateNormalization(f64),

    #[error("sequence too short: {frames} frames for a window of {window}")]
    SequenceTooShort { frames: usize, window: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("report error: {0}")]
    Report(String),

    #[error("refusing to overwrite existing output {0} (pass --force)")]
    OutputExists(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptDataset {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
