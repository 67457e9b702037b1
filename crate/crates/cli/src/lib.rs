//! End-to-end orchestration: generate, slice, sample, encode, train,
//! evaluate, cross-validate, sweep and report.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod split;

pub use config::PipelineConfig;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("inconsistent artifacts: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Trace(#[from] capsim_core::trace::TraceError),
    #[error(transparent)]
    Sim(#[from] capsim_core::microsim::SimError),
    #[error(transparent)]
    Slice(#[from] capsim_core::slicer::SliceError),
    #[error(transparent)]
    Sample(#[from] capsim_core::sampler::SampleError),
    #[error(transparent)]
    Tokenize(#[from] capsim_core::tokenizer::TokenizeError),
    #[error(transparent)]
    Predict(#[from] capsim_predictor::PredictError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// 2 for validation problems, 3 for everything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
