//! Classification-aided multitarget tracking with sum-product message passing.
//!
//! A fixed set of potential targets (PTs) is tracked jointly over kinematic
//! state, existence and class. Each PT belief is particle based; measurement
//! origin uncertainty is resolved per sensor and per scan by iterative
//! probabilistic data association, and classifier outputs attached to the
//! measurements enter the likelihood through a confusion matrix.
//!
//! Modules:
//!
//! - [`model`]: domain types and the generative / statistical models
//! - [`association`]: the iterative data association kernel and its exact oracle
//! - [`engine`]: prediction, measurement evaluation/update and belief fusion
//! - [`estimator`]: detection and MMSE state/class estimation
//! - [`metrics`]: OSPA, GOSPA, OSPA-T, false alarm rate, optimal assignment
//! - [`simulator`]: the six-target crossing scenario and measurement generation

pub mod association;
pub mod engine;
pub mod estimator;
pub mod metrics;
pub mod model;
pub mod simulator;

pub use association::{AssociationError, BetaTable, BpOptions, EtaTable};
pub use engine::{AugmentedBelief, EngineError, SpaParams, SpaTracker, TrackerModels};
pub use estimator::TrackEstimate;
pub use metrics::{MetricReport, PointSet};
pub use model::{
    AugmentedMeasurement, ClassTransitionMatrix, ClutterClassPmf, ConfusionMatrix, KinematicState, ModelError,
    MotionModel, Roi, SensorModel,
};
pub use simulator::{MeasurementFrame, Scenario};
