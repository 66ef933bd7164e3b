//! Two-view embedding fusion for tracing which speech-synthesis system produced
//! an utterance.
//!
//! The crate trains single-view classifiers (dense and 1-D convolutional), a
//! concatenation-fusion baseline, and a gated fusion network that aligns its
//! two branches with a canonical-correlation term and refines the fused
//! features with self-attention. Evaluation reports accuracy and one-vs-all
//! equal error rate.

pub mod cca;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
