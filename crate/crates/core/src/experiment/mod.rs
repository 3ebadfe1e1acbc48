//! Configuration-driven experiments on the tumor model.

pub mod config;
pub mod run;
pub mod submodels;

pub use config::{ExperimentConfig, Scheme, Variant};
pub use run::{cfl_experiment, cfl_sweep, run_experiment, stability_threshold, CflRow, ExperimentOutcome};
pub use submodels::instantiate_submodels;
