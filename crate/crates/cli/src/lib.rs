//! Experiment runner for the `spb-core` solvers: configuration parsing,
//! traced runs, derivative checks, synthetic data export, and plotting.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod runner;
pub mod trace;

pub use commands::{cmd_check, cmd_compare, cmd_datagen, cmd_plot, cmd_run, Options};
pub use config::RunConfig;
pub use error::CliError;
