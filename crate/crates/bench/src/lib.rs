//! Scenario runner and file formats for comparing DeePC and Koopman MPC on
//! the pasteurizer surrogate.
//!
//! The `dpc-bench` binary wraps these modules in four subcommands:
//! `gen-data`, `identify`, `run` and `compare`.

pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod scenario;

pub use config::ScenarioConfig;
pub use error::{BenchError, Result};
