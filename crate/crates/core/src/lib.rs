//! Sparse-autoencoder analysis of a toy code-generating transformer.
//!
//! The crate covers the whole loop: a synthetic programming task with
//! executable labels ([`harness`]), a small hookable transformer ([`lm`]),
//! JumpReLU sparse autoencoders ([`sae`]), statistics that pick
//! correctness-predicting and correctness-steering latents ([`select`]),
//! detection metrics ([`detect`]), causal interventions ([`intervene`]),
//! attention accounting ([`attention`]) and an artifact-based pipeline
//! ([`pipeline`]).

pub mod error;
pub mod harness;
pub mod lm;
pub mod rng;
pub mod sae;
pub mod select;
pub mod detect;
pub mod intervene;
pub mod attention;
pub mod pipeline;

pub use error::{Error, Result};
