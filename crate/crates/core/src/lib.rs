//! Bias-controlled out-of-distribution (OoD) benchmark harness.
//!
//! The crate builds category x condition image datasets, carves them into
//! in-distribution / out-of-distribution splits at controlled diversity,
//! trains small convolutional networks with three OoD-improving approaches
//! (late stopping, tuned batch-norm momentum, invariance loss) and scores
//! individual neurons for selectivity and invariance.
//!
//! Module map:
//!
//! - [`datagen`]: procedural Grid-Positions glyphs, IDX ingestion, dataset storage.
//! - [`splits`]: combination ladders and stratified InD/OoD partitioning.
//! - [`neuralcore`]: layers, forward/backward passes, checkpoints, gradient checks.
//! - [`training`]: losses, pair scheduling, Adam and the training loop.
//! - [`analysis`]: selectivity/invariance scores and the reporting statistics.
//! - [`experiment`]: grid search, measurement trials and result matrices.
//! - [`config`]: the versioned JSON run configuration used by the CLI.

pub mod analysis;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod neuralcore;
pub mod seeds;
pub mod splits;
pub mod training;

pub use error::{Error, Result};
