//! Experiment harness: configuration, commands, reports and plots behind the
//! `tpc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod telemetry;

pub use config::ExperimentConfig;
pub use error::{HarnessError, HarnessResult};
