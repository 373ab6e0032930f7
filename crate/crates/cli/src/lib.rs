//! Batch front end: certification suites, solves, `s` sweeps and reports,
//! written as `summary.json`, per-suite CSV files and binary fields.

pub mod config;
pub mod run;

pub use config::{Command, Overrides, RunConfig};
pub use run::{run, RunError, Summary};
