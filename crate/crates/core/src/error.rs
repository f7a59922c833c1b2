use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value produced by `{op}`")]
    Numeric { op: &'static str },

    #[error("surrogate fit for {name} failed: MSE {mse:.3e} after {steps} steps")]
    FitFailure { name: String, mse: f64, steps: usize },

    #[error("row {0} has no probability mass")]
    DegenerateRow(usize),

    #[error("proposal support is empty (k = {k} of {n} with S > 0)")]
    EmptySupport { k: usize, n: usize },

    #[error("latent dimension {0} is not supported (copula recovery needs exactly 1)")]
    UnsupportedDimension(usize),

    #[error("latents are degenerate: ranks are all tied")]
    DegenerateRank,

    #[error("prior recovery failed: encoder MSE {encoder_mse:.3e}, decoder KL {decoder_kl:.3e}")]
    Recovery { encoder_mse: f64, decoder_kl: f64 },

    #[error("training failed: {0}")]
    Training(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
