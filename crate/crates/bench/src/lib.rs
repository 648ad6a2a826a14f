//! Command-line harness for the synthetic experiments: data generation,
//! pipeline runs, parameter guidance, oracle sweeps and CSV output.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{DataSource, GuidanceMode, RunArgs, RunConfig};
pub use runner::{run, run_sweep, RunOutcome, SweepOutcome, THREADS_ENV};
