//! Continuous microbenchmarking on elastic function platforms.
//!
//! Two versions of a suite run side by side on the same instance, results are
//! paired per run, and a bootstrap over the relative differences decides which
//! benchmarks changed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod backends;
pub mod model;
pub mod orchestrator;
pub mod reporting;
pub mod seed;
pub mod stats;

pub use model::{
    BenchmarkFailure, BenchmarkId, BenchmarkStats, Classification, ExperimentConfig, ExperimentResult, Measurement,
    PairedSample, Version, VersionPair,
};
