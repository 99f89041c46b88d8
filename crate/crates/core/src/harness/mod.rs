//! Evaluation harness: metrics, feature-file ingestion, synthetic data and
//! the benchmark grid runner.

pub mod featurefile;
pub mod grid;
pub mod metrics;
pub mod synth;
