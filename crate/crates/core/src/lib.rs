//! Symmetrical Gaussian error linear units (SGELU) and the tooling to compare
//! them against GELU and LiSHT on MNIST.
//!
//! Everything runs on a small in-house stack: a dense [`Matrix`], dense
//! layers with hand-written backpropagation, Adam, batch and min-max
//! normalization, an IDX loader, and the post-training analyses.

pub mod activations;
pub mod analysis;
pub mod error;
pub mod experiments;
pub mod math;
pub mod mnist;
pub mod network;
pub mod normalization;
pub mod report;

pub use activations::ActivationKind;
pub use error::{Error, Result};
pub use math::{Matrix, Rng};
pub use network::{Mode, Network};
