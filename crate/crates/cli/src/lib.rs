//! Library side of the `chronoforge` binary: experiment configs, the staged
//! pipeline and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod logging;
pub mod pipeline;
pub mod stage;

pub use config::{validate_config, Diagnostic, ExperimentConfig, LoadedConfig};
pub use pipeline::{run_pipeline, run_with_marker, RunSummary};
