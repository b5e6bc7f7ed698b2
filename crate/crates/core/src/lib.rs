//! Desk-scale preference-optimization engine for argument generation.
//!
//! Trains a tiny causal language model with SFT, DPO, CPO and FIPO
//! objectives over a preference dataset of sound vs. fallacious arguments,
//! generates the fallacious side of that dataset from a prompt template
//! (with a deterministic offline mock), and evaluates policies with a
//! pluggable judge: win-rate, fallacy-rate, Randolph's kappa, majority
//! agreement and confusion matrices.

pub mod cli;
pub mod datagen;
pub mod dataset;
mod error;
pub mod gradsuite;
pub mod judge;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod trainer;

pub use error::{Error, Result};
