//! Class-incremental text classification with a dual-channel (character
//! context + lexicon sub-entity) encoder, embedding episodic memory and
//! embedding consolidation, plus comparison baselines and an evaluation
//! harness for disjoint-label task streams.

pub mod baselines;
pub mod continual;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod stream;

pub use error::{Error, Result};
