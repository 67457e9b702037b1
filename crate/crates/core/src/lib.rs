//! Trace model, timing oracle, slicer, sampler and tokenizer of the clip
//! performance-prediction pipeline.

pub mod microsim;
pub mod sampler;
pub mod slicer;
pub mod tokenizer;
pub mod trace;
