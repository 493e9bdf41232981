//! Construction of knowledge-aware finetuning (KAFT) datasets from
//! normalized QA corpora, and evaluation of model predictions for
//! controllability and robustness.
//!
//! The library is organized as a set of pure file-to-file stage primitives;
//! the `kaft` binary wires them into a pipeline.

pub mod assemble;
pub mod corpus;
pub mod counterfact;
pub mod error;
pub mod evalkit;
pub mod modelio;
pub mod probe;
pub mod resources;
pub mod slices;
pub mod textkit;

pub use error::{ErrorClass, KaftError, Result};
