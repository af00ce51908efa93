//! Experiment harness for the nested polarized-traces solver: parameter
//! sweeps, spectrum dumps, scaling fits and single solves.

pub mod config;
pub mod error;
pub mod fit;
pub mod solve;
pub mod spectrum;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{BenchError, Result};
