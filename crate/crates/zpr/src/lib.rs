//! Zero-pronoun antecedent selection as a sequential decision process.
//!
//! The library models antecedent selection for an anaphoric zero pronoun as an
//! episode over its candidate noun phrases: a recurrent context encoder for the
//! pronoun, a recurrent content encoder for each candidate, and a feed-forward
//! policy that at each step decides `corefer` / `non-corefer` using a pooled
//! memory of the antecedents selected so far. Training is supervised
//! pretraining followed by REINFORCE with a per-step expected-reward baseline.
//! Everything is plain `f64` with hand-derived backward passes, verified
//! against finite differences and exhaustive-enumeration oracles.

pub mod agent;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod math;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
pub use math::{ParamStore, RngStream, Tensor};
