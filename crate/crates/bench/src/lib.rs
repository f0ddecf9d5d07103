//! Experiment harness: configuration, seeded runs of the four variants,
//! metrics logging, the greedy baseline, and summary and plot export.

pub mod compare;
pub mod config;
pub mod export;
pub mod greedy;
pub mod manifest;
pub mod metrics;
pub mod runner;

use thiserror::Error;

pub use compare::{compare_variants, Comparison};
pub use config::{ExperimentConfig, Variant};
pub use export::{circular_moving_average, export_plot_data};
pub use greedy::greedy_policy;
pub use manifest::{RunManifest, RunSummary};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use runner::{run_experiment, run_experiment_with};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("cannot write output: {0}")]
    OutputUnwritable(String),
    #[error("corrupt metrics log: {0}")]
    LogCorrupt(String),
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("scenario hash {found} does not match {expected}")]
    ScenarioMismatch { expected: String, found: String },
    #[error("simulation failed: {0}")]
    Sim(String),
    #[error("llm bridge failed: {0}")]
    Llm(String),
}
