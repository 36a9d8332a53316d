//! Config-driven experiment runner for the D-MSSCA simulator: parses JSON run configs,
//! executes seeded replicates in parallel, runs the figure presets, and writes CSV
//! traces and JSON summaries.

pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
pub mod runner;

pub use commands::{check_command, check_report, preset_command, run_command, RunOverrides};
pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, Result};
