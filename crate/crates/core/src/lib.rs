//! Heterogeneous Deffuant-Weisbuch opinion dynamics.
//!
//! Agents hold opinions in `[0, 1]` and each has its own confidence bound. At
//! every step a uniformly random pair meets, and each agent moves a fraction
//! `mu` towards the other if the gap is within its own bound.
//!
//! * [`engine`]: the update rule, pair sampling, seeded simulation and traces.
//! * [`clusters`]: maximal-confidence clusters, completeness and the Lyapunov
//!   function `F`.
//! * [`control`]: pair sequences that split or shrink a cluster, or complete
//!   every cluster, with their length bounds.
//! * [`analysis`]: the mean-square rate bound, limit detection and an exact
//!   path-enumeration oracle for small instances.
//! * [`experiments`]: seeded Monte Carlo ensembles and sweeps.
//!
//! Agent indices are 0-based throughout the Rust API. Files and other external
//! artifacts (trace CSV headers, pair lists in JSON, cluster member lists) use
//! 1-based labels.

pub mod analysis;
pub mod clusters;
pub mod control;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod numeric;

pub use analysis::{
    check_consensus_corollary, detect_limit, exact_expectation_curve, exact_expectation_oracle, rate_bound,
    ConsensusVerdict, Functional, LimitReport, RateBoundParams,
};
pub use clusters::{lyapunov_f, mc_partition, verify_convexity, verify_gap, McCluster, McPartition};
pub use control::{
    completion_bound, drive_to_complete, split_or_shrink, split_or_shrink_bound, verify_outcome, ControlSequence,
    ControlSequenceFile, Outcome,
};
pub use engine::{
    apply_sequence, dw_step, read_trace, simulate, write_trace, AgentPair, ConfidenceProfile, ModelParams,
    OpinionState, Trace,
};
pub use error::{Error, Result};
pub use experiments::{
    consensus_probability_sweep, run_ensemble, BoundsLaw, EnsembleConfig, EnsembleResult, InitialLaw, SweepResult,
};
