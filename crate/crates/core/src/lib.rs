//! Generative pre-training and zero-shot forecasting on longitudinal
//! EHR token sequences.
//!
//! The pipeline runs: synthetic corpus generation ([`corpus`]) →
//! vocabulary construction ([`vocab`]) → timeline tokenization
//! ([`sequencer`]) → causal-LM training ([`model`]) → greedy visit
//! generation ([`forecast`]) → visit-level and zero-shot cohort
//! evaluation ([`eval`]) → supervised linear probe ([`probe`]) and
//! attention/embedding interpretability export ([`interpret`]).

pub mod corpus;
pub mod sequencer;
pub mod vocab;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod interpret;
pub mod model;
pub mod probe;

pub use error::{Error, Result};
