//! Configuration, test cases, boundary conditions, the time loop, output
//! and convergence studies.

pub mod boundary;
pub mod config;
pub mod convergence;
pub mod output;
pub mod run;
pub mod testcases;

pub use config::RunConfig;
pub use run::{RunError, RunSummary, Simulation, StepRecord};
