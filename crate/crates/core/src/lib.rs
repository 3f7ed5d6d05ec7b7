//! Retrieval kernels and data pipelines for cross-lingual open-domain QA.

pub mod corpus;
pub mod distill;
pub mod distribution;
pub mod embedding;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod io;
pub mod mining;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod tensor;
pub mod tokenize;

pub use error::{Error, Result};
