//! Supermodeling: ensembles of nudged, synchronized sub-models whose
//! coupling coefficients are trained against a reference trajectory.
//!
//! The reference system is a five-field tumor growth model on a regular
//! 3-D grid; scalar toy systems are provided for testing.

// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod field;
pub mod ground_truth;
pub mod io;
pub mod theory;
pub mod tumor;

pub use dynamics::{estimate_lipschitz, explicit_step, DynamicalSystem, LinearSystem, LogisticParams, LogisticSystem, VectorState, Volumes};
pub use engine::{
    coupled_step, simulate, supermodel_output, train, update_coupling, CouplingMatrix, NudgeMode, SimulationRun, SubModelEnsemble,
    TrainingConfig, TrainingReport,
};
pub use error::{Error, Result};
pub use field::{l2_norm, max_over_time, taxi_ensemble_distance, EnsembleState, GridSpec, ScalarField, State};
pub use ground_truth::{generate_gt, GroundTruth};
pub use tumor::{ModelState, TumorParams, TumorSystem};
