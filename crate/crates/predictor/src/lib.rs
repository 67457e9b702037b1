//! Attention-based clip execution-time predictor with exact gradients.

pub mod aggregate;
pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod real;
pub mod train;

pub use model::{Model, ModelConfig, Prepared};
pub use real::{Precision, Real};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite gradient in '{tensor}' at step {step}")]
    NonFiniteGrad { tensor: String, step: usize },
    #[error("fact must be positive, got {0}")]
    Domain(f64),
    #[error("interval '{0}' has no clip predictions")]
    MissingClip(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    VocabMismatch { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PredictError>;
