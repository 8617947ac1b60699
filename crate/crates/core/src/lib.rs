//! Property-inference toolkit: map word embeddings onto semantic feature
//! norms with PLSR or a one-hidden-layer network, and measure those mappings
//! against random, shuffled and self-mapping baselines.

pub mod ablation;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ffnn;
pub mod matrix;
pub mod model_io;
pub mod plsr;
pub mod report;

pub use error::{Error, Result};
