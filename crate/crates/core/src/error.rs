use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid latent config: {0}")]
    InvalidLatent(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("resolution mismatch: expected {expected}, got {got}")]
    Resolution { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("cosine undefined: {0}")]
    UndefinedCosine(String),

    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: u64 },

    #[error("iteration {iteration} out of range for schedule of {total} iterations")]
    IterationOutOfRange { iteration: u64, total: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("batch size {batch_size} exceeds dataset length {len}")]
    BatchTooLarge { batch_size: usize, len: usize },

    #[error("image decode failed for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("covariance is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("unsupported package format version `{0}`")]
    Version(String),

    #[error("package is missing parameter `{0}`")]
    MissingParameter(String),

    #[error("package has unexpected parameter `{0}`")]
    ExtraParameter(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("blob for parameter `{name}` holds {found} bytes, expected {expected}")]
    BlobLength {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("checksum mismatch for `{0}`")]
    Checksum(String),

    #[error("corrupt package: {0}")]
    Package(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
