//! Structured self-attention for document-level relation extraction.
//!
//! Entity structure (coreference and sentence co-occurrence between
//! mentions) is encoded as a token-by-token grid of dependency types. Each
//! attention head turns the dependency type of a token pair into an
//! additive bias on its attention score.

pub mod data;
pub mod encoder;
mod error;
pub mod harness;
pub mod rehead;
pub mod structure;
pub mod tensor;

pub use error::{Error, Result};
