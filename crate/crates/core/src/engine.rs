//! Stage, episode, and batch execution of the cumulative-progress task.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionPool, GuidancePolicy, HarnessPlan, StageConfig};
use crate::error::{Error, Result};
use crate::guidance::{select_by_means, shape_indices, PoolShaping};
use crate::sampling::TruncatedGaussian;
use crate::stats::wilson_interval;
use crate::streams::{stable_tag, stream};

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Success,
    Overshoot,
    DrawLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    pub goal: i64,
    pub final_progress: i64,
    pub draws_used: u32,
    pub status: StageStatus,
    pub actions: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub stages: Vec<StageRecord>,
    /// `|Σ final_progress − total|`, present only on success.
    pub final_bias: Option<i64>,
}

/// Aggregate of a Monte Carlo batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchResult {
    pub episodes: u64,
    pub successes: u64,
    pub pass_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_abs_final_bias: Option<f64>,
    /// Sample standard deviation of the final bias over successful episodes.
    pub sd_abs_final_bias: Option<f64>,
    pub failure_counts: BTreeMap<StageStatus, u64>,
}

impl BatchResult {
    pub fn failures(&self, status: StageStatus) -> u64 {
        self.failure_counts.get(&status).copied().unwrap_or(0)
    }
}

/// Compact per-episode observation used for aggregation and paired tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSummary {
    pub success: bool,
    pub failure: Option<StageStatus>,
    pub final_bias: Option<i64>,
}

impl From<&EpisodeOutcome> for EpisodeSummary {
    fn from(outcome: &EpisodeOutcome) -> Self {
        Self {
            success: outcome.success,
            failure: outcome
                .stages
                .last()
                .map(|s| s.status)
                .filter(|s| *s != StageStatus::Success),
            final_bias: outcome.final_bias,
        }
    }
}

/// Pool with samplers prepared once.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPool {
    samplers: Vec<TruncatedGaussian>,
}

impl PreparedPool {
    pub(crate) fn new(pool: &ActionPool) -> Result<Self> {
        let samplers = pool
            .dists()
            .iter()
            .map(|d| TruncatedGaussian::new(*d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samplers })
    }
}

fn run_stage_on<R: Rng + ?Sized>(
    goal: i64,
    config: &StageConfig,
    samplers: &[&TruncatedGaussian],
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<StageRecord> {
    let lo = goal - config.tolerance;
    let hi = goal + config.tolerance;
    let mut progress = 0i64;
    let mut actions = Vec::with_capacity(config.draw_budget as usize);
    loop {
        let residual = goal - progress;
        let means = samplers.iter().map(|s| s.spec().mu());
        let idx = select_by_means(means, residual, policy, rng)?;
        let action = samplers[idx].sample(rng);
        progress += action;
        actions.push(action);
        let draws_used = actions.len() as u32;
        let status = if progress >= lo && progress <= hi {
            Some(StageStatus::Success)
        } else if progress > hi {
            Some(StageStatus::Overshoot)
        } else if draws_used >= config.draw_budget {
            Some(StageStatus::DrawLimit)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(StageRecord {
                goal,
                final_progress: progress,
                draws_used,
                status,
                actions,
            });
        }
    }
}

fn run_episode_on<R: Rng + ?Sized>(
    plan: &HarnessPlan,
    config: &StageConfig,
    samplers: &[&TruncatedGaussian],
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let mut stages = Vec::with_capacity(plan.stages());
    for &goal in plan.subgoals() {
        let record = run_stage_on(goal, config, samplers, policy, rng)?;
        let ok = record.status == StageStatus::Success;
        stages.push(record);
        if !ok {
            return Ok(EpisodeOutcome {
                success: false,
                stages,
                final_bias: None,
            });
        }
    }
    let reached: i64 = stages.iter().map(|s| s.final_progress).sum();
    Ok(EpisodeOutcome {
        success: true,
        stages,
        final_bias: Some((reached - plan.total()).abs()),
    })
}

/// Runs one stage: select, draw, and classify (window, then overshoot, then
/// budget) until a terminal status is reached.
pub fn run_stage<R: Rng + ?Sized>(
    goal: i64,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<StageRecord> {
    if goal < 1 {
        return Err(Error::InvalidPlan(format!("stage goal must be >= 1, got {goal}")));
    }
    config.validate()?;
    let prepared = PreparedPool::new(pool)?;
    let refs: Vec<_> = prepared.samplers.iter().collect();
    run_stage_on(goal, config, &refs, policy, rng)
}

/// Runs the plan's stages in order, stopping at the first failed stage.
pub fn run_episode<R: Rng + ?Sized>(
    plan: &HarnessPlan,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let prepared = PreparedPool::new(pool)?;
    let refs: Vec<_> = prepared.samplers.iter().collect();
    run_episode_on(plan, config, &refs, policy, rng)
}

/// Everything that defines a Monte Carlo cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub plan: HarnessPlan,
    pub config: StageConfig,
    pub pool: ActionPool,
    pub policy: GuidancePolicy,
    /// Optional random pool restriction, redrawn per episode.
    pub shaping: Option<PoolShaping>,
}

#[derive(Serialize)]
struct PairingKey<'a> {
    plan: &'a [i64],
    config: &'a StageConfig,
    pool: &'a ActionPool,
    shaping: &'a Option<PoolShaping>,
}

impl Scenario {
    pub fn new(plan: HarnessPlan, config: StageConfig, pool: ActionPool, policy: GuidancePolicy) -> Self {
        Self {
            plan,
            config,
            pool,
            policy,
            shaping: None,
        }
    }

    pub fn with_shaping(mut self, shaping: PoolShaping) -> Self {
        self.shaping = Some(shaping);
        self
    }

    /// Stable hash of the full cell configuration; keys the action streams.
    pub fn cell_tag(&self) -> u64 {
        stable_tag(self)
    }

    /// Hash of the configuration without the policy; keys the pool-shaping
    /// streams so that policies compared on the same cell see identical subsets.
    pub fn pairing_tag(&self) -> u64 {
        stable_tag(&PairingKey {
            plan: self.plan.subgoals(),
            config: &self.config,
            pool: &self.pool,
            shaping: &self.shaping,
        })
    }
}

/// Per-episode summaries, in episode order. Episode `i` draws from stream
/// `i` of the cell's family, so the result is independent of thread count.
pub fn simulate_episodes(scenario: &Scenario, episodes: u64, master_seed: u64) -> Result<Vec<EpisodeSummary>> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    scenario.config.validate()?;
    if let Some(shaping) = scenario.shaping {
        shaping.retained(scenario.pool.len())?;
    }
    let prepared = PreparedPool::new(&scenario.pool)?;
    let cell_tag = scenario.cell_tag();
    let pairing_tag = scenario.pairing_tag() ^ 0x5348_4150_4544_0000;
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let refs: Vec<&TruncatedGaussian> = match scenario.shaping {
                Some(shaping) => {
                    let mut shape_rng = stream(master_seed, pairing_tag, i);
                    shape_indices(prepared.samplers.len(), shaping, &mut shape_rng)?
                        .into_iter()
                        .map(|j| &prepared.samplers[j])
                        .collect()
                }
                None => prepared.samplers.iter().collect(),
            };
            let mut rng = stream(master_seed, cell_tag, i);
            let outcome = run_episode_on(&scenario.plan, &scenario.config, &refs, scenario.policy, &mut rng)?;
            Ok(EpisodeSummary::from(&outcome))
        })
        .collect()
}

/// Aggregates episode summaries into a batch result with a 95% Wilson interval.
pub fn summarize(summaries: &[EpisodeSummary]) -> BatchResult {
    let episodes = summaries.len() as u64;
    let mut successes = 0u64;
    let mut bias_sum = 0i128;
    let mut bias_sq = 0i128;
    let mut failure_counts = BTreeMap::new();
    for s in summaries {
        if s.success {
            successes += 1;
            let b = s.final_bias.unwrap_or(0) as i128;
            bias_sum += b;
            bias_sq += b * b;
        }
        if let Some(f) = s.failure {
            *failure_counts.entry(f).or_insert(0u64) += 1;
        }
    }
    let pass_rate = if episodes > 0 { successes as f64 / episodes as f64 } else { 0.0 };
    let (ci_low, ci_high) = if episodes > 0 {
        wilson_interval(successes, episodes, Z_95).expect("valid counts")
    } else {
        (0.0, 1.0)
    };
    let (mean, sd) = if successes > 0 {
        let n = successes as f64;
        let mean = bias_sum as f64 / n;
        let sd = if successes > 1 {
            let var = (bias_sq as f64 - n * mean * mean) / (n - 1.0);
            Some(var.max(0.0).sqrt())
        } else {
            None
        };
        (Some(mean), sd)
    } else {
        (None, None)
    };
    BatchResult {
        episodes,
        successes,
        pass_rate,
        ci_low: ci_low.min(pass_rate),
        ci_high: ci_high.max(pass_rate),
        mean_abs_final_bias: mean,
        sd_abs_final_bias: sd,
        failure_counts,
    }
}

/// Seeded Monte Carlo batch. Uses the ambient rayon pool; results are
/// bit-identical for any pool size.
pub fn run_batch(scenario: &Scenario, episodes: u64, master_seed: u64) -> Result<BatchResult> {
    Ok(summarize(&simulate_episodes(scenario, episodes, master_seed)?))
}
