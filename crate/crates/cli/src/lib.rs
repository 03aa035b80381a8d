//! Experiment harness around the ink-channel FDI pipeline: configuration,
//! end-to-end orchestration, plot-data emission, and the file formats the
//! `inkwell` binary speaks.

pub mod config;
pub mod experiment;
pub mod io;
pub mod plot;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ExperimentReport};
