//! Causality detection for natural-language requirements.
//!
//! Sentences are tokenized into fixed-length subword sequences, enriched
//! with dependency tags, encoded by a small transformer and classified by a
//! softmax head as causal or non-causal. A cue-phrase baseline and the
//! binary evaluation protocol live alongside the learned model.

pub mod baseline;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod prediction;
pub mod synthetic;
pub mod syntax;
pub mod tokenizer;

pub use error::{CheckpointError, Error, Result};
pub use prediction::{Label, Prediction};
