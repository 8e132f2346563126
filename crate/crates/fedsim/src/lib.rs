//! Deterministic simulator for local descent methods with periodic
//! averaging on heterogeneous data shards.
//!
//! The crate builds synthetic federated problems with known constants, runs
//! local full-gradient descent (periodic averaging with device sampling),
//! local minibatch SGD, and a networked variant that mixes over a gossip
//! matrix instead of a server, records per-iteration trajectories, and
//! checks the hyperparameter admissibility condition attached to each
//! convergence guarantee.
//!
//! Everything is seeded: identical configurations reproduce identical
//! trajectories bit for bit.

pub mod conditions;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod problem;
pub mod sampling;
pub mod topology;

pub use conditions::{
    check_lfgd, check_lfgd_strict, check_lfsgd_nonconvex, check_lfsgd_pl, check_nfsgd,
    check_nfsgd_full, ConditionReport, NfsgdReport,
};
pub use engine::{
    aggregate_and_broadcast, apply_controlled_averaging, local_step, run_lfgd, run_lfsgd,
    run_nfsgd, Algorithm, ControlledAveraging, LearningRateSchedule, RunConfig, Simulation,
    WorkerState,
};
pub use error::{FedError, Result};
pub use metrics::{
    ensemble_mean, fit_rate, oracle_sync_gd, RateModel, RunStatus, Trajectory, TrajectoryRecord,
};
pub use model::ModelVector;
pub use problem::{
    make_synthetic_problem, weighted_diversity, FederatedProblem, LocalObjective, SyntheticSpec,
    WeightsRule,
};
pub use sampling::{
    fit_variance_constants, sample_devices, stochastic_gradient, DeviceSample, RngStream,
};
pub use topology::{make_topology, validate_mixing, MixingMatrix, TopologyKind};
