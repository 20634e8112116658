//! Pool-based batch active learning for text generation tasks.
//!
//! The crate simulates the full loop: an unlabeled pool is sampled from a
//! training split, a strategy picks a batch, the batch is labeled, the base
//! model is fine-tuned on everything labeled so far, and the result is
//! evaluated on a test split. Models are reached through the
//! [`backend::Backend`] trait; [`backend::ToyBackend`] is a deterministic
//! stand-in that makes the whole pipeline runnable without ML dependencies.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod seeding;
pub mod strategies;
pub mod synth;

pub use error::{Error, Result};
