//! Simulation laboratory for staged agent harnesses on a cumulative-progress
//! task: truncated-Gaussian action models, greedy guidance policies, seeded
//! Monte Carlo, exact dynamic-programming oracles, and closed-form
//! diagnostics for decomposition granularity, guidance alignment, and
//! partial scaffolding.

// `!(x >= 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod guidance;
pub mod oracle;
pub mod report;
pub mod sampling;
pub mod stats;
pub mod streams;
pub mod sweeps;
pub mod theory;
pub mod verify;

pub use domain::{
    agents, build_linear_pool, decompose_partial, decompose_uniform, validate_plan, ActionPool,
    GuidancePolicy, HarnessPlan, PlanWarning, StageConfig, TruncatedGaussianSpec,
};
pub use engine::{
    run_batch, run_episode, run_stage, BatchResult, EpisodeOutcome, Scenario, StageRecord, StageStatus,
};
pub use error::{Error, Result};
pub use guidance::{select_action_dist, shape_pool, PoolShaping};
pub use sampling::{action_pmf, sample_action, truncated_moments, ActionPmf, TruncatedGaussian};
pub use stats::wilson_interval;
pub use theory::{
    check_discrete_convexity, filtered_recoverability, find_m_alpha, find_m_peak, granularity_bound,
    marginal_delta, mismatch_rho, reachable_window_membership, retention_gap, slice_objective,
    FilteringInstance, SliceModel, StageBoundInput, StageWindows,
};
pub use oracle::{
    chain_rule_check, enumerate_pass_probability, enumerate_stage, stage_retention_gap, PassProbability, StageDp,
};
