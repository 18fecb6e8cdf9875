//! Experiment orchestration for metabeam: configuration files, training
//! loops for the four method variants, the frequency ablation, the fixed-beam
//! sandbox table, and the metrics used to summarize runs.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod sandbox;

pub use config::{AblationConfig, EnvSection, ExperimentConfig, SandboxConfig, Variant};
pub use runner::{run_experiment, summarize_dir, ExperimentSummary};
