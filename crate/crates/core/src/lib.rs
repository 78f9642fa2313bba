//! Controlled-constrainedness laboratory.
//!
//! Source sentences of a parallel corpus are truncated to a percentage `s` of
//! their length, which turns translation (`s = 100`) smoothly into
//! unconditioned generation (`s = 0`). Reference conditional models are fitted
//! at every level, decoded with search and sampling, and scored with the
//! degeneration metrics (length ratio, n-gram repetition, BLEU, entropy,
//! probability mass coverage).

pub mod bridge;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod metrics;
pub mod models;
pub mod tokenizer;

pub use error::{Error, Result};

/// Integer id of a token in a [`tokenizer::Vocabulary`].
pub type TokenId = u32;
