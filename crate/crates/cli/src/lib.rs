//! Command-line workflows for bi-factor and second-order copula models:
//! CSV ingestion, run configuration, and structured text/JSON reports around
//! the fit / select / simulate / gof / diagnose pipelines.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod json;
pub mod report;

pub use error::{CliError, ExitCode};
