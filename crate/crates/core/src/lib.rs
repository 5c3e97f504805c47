//! Attribute-augmented GAN laboratory.
//!
//! The crate bundles a small reverse-mode differentiation engine, neural
//! network building blocks, adversarial objectives with an attribute-fused
//! discriminator, annotation ingestion and statistics, and the Inception
//! Score / Mode Score / FID metrics, plus an experiment harness tying them
//! together at desk scale.

pub mod annotations;
pub mod attributes;
pub mod autodiff;
pub mod error;
pub mod gan;
pub mod harness;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
