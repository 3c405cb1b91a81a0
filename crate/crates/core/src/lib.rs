//! Robust training of small dense networks under label noise.
//!
//! The crate implements five training paradigms over one or two networks:
//! Standard, self-paced MentorNet, Decoupling ("update by disagreement"),
//! Co-teaching and Co-teaching+, together with seeded label corruption,
//! keep-rate schedules and the evaluation metrics used to compare them.
//!
//! Module map:
//!
//! - [`nn`]: dense network engine (forward, per-sample loss, backward, Adam).
//! - [`data`]: MNIST IDX loader and synthetic Gaussian datasets.
//! - [`noise`]: label transition matrices and corruption.
//! - [`selection`]: keep-rate schedules, small-loss and disagreement selection.
//! - [`strategies`]: epoch procedures and the training loop.
//! - [`metrics`]: test accuracy, total variation, selection purity.
//! - [`harness`]: JSON experiment configs, CSV output, sweeps.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod selection;
pub mod strategies;

pub use error::{CoteachError, Result};
