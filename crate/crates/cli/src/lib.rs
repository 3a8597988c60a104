//! Configuration-driven runner for the `pevo` experiments: JSON configs in,
//! content-addressed run directories out.

pub mod config;
pub mod experiments;
pub mod runner;

pub use config::{validate, Diagnostics, RunConfig};
pub use runner::{run, run_in, sweep, RunError, RunRecord};
