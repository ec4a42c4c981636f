use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image is {height}x{width}; edge detection needs at least 3x3")]
    ImageTooSmall { height: usize, width: usize },

    #[error("image {height}x{width} is not divisible into a {grid}x{grid} grid")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        grid: usize,
    },

    #[error("invalid permutation of {expected} cells: {reason}")]
    InvalidPermutation { expected: usize, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mixing weight {0} outside [0, 1]")]
    InvalidLambda(f32),

    #[error("distortion level {0} outside [0, 1]")]
    InvalidLevel(f32),

    #[error("batch size {0} must be even and at least 2")]
    OddBatchSize(usize),

    #[error("sample pool `{0}` is empty")]
    EmptyPool(&'static str),

    #[error("empty split")]
    EmptySplit,

    #[error("split is not a cue-conflict split: record {index} has shape == texture == {class}")]
    NotConflictSplit { index: usize, class: usize },

    #[error("pair set `{kind}` has {got} pairs; at least {needed} required")]
    TooFewPairs {
        kind: &'static str,
        got: usize,
        needed: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss diverged at epoch {epoch}, step {step}: {loss}")]
    DivergedLoss { epoch: usize, step: usize, loss: f32 },

    #[error("checksum mismatch in {}", path.display())]
    ChecksumMismatch { path: PathBuf },

    #[error("format mismatch: header says {header}, payload has {payload}")]
    VersionMismatch { header: String, payload: String },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
