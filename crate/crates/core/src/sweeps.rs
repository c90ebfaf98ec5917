//! Declarative parameter sweeps over plans, policies, and pools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    agents, decompose_partial, decompose_uniform, validate_plan, ActionPool, GuidancePolicy,
    HarnessPlan, StageConfig,
};
use crate::engine::{simulate_episodes, summarize, BatchResult, EpisodeSummary, Scenario};
use crate::error::{Error, Result};
use crate::guidance::PoolShaping;
use crate::oracle::{enumerate_pass_probability, enumerate_shaped_pass_probability, enumerate_stage, PassProbability};
use crate::theory::{check_discrete_convexity, find_m_alpha, find_m_peak, SliceModel};

pub const GRANULARITY_STAGES: [i64; 14] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 15, 18, 20];
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Granularity,
    GuidancePool,
    PartialHarness,
    RetryBudget,
    Tolerance,
    Pruning,
}

impl SweepKind {
    pub const ALL: [SweepKind; 6] = [
        SweepKind::Granularity,
        SweepKind::GuidancePool,
        SweepKind::PartialHarness,
        SweepKind::RetryBudget,
        SweepKind::Tolerance,
        SweepKind::Pruning,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::Granularity => "granularity",
            SweepKind::GuidancePool => "guidance_pool",
            SweepKind::PartialHarness => "partial_harness",
            SweepKind::RetryBudget => "retry_budget",
            SweepKind::Tolerance => "tolerance",
            SweepKind::Pruning => "pruning",
        }
    }

    /// Swept axes in output order; each is also a CSV coordinate column.
    pub fn axes(&self) -> &'static [Axis] {
        match self {
            SweepKind::Granularity => &[Axis::Agent, Axis::Stages],
            SweepKind::GuidancePool => &[Axis::PoolSize, Axis::Policy],
            SweepKind::PartialHarness => &[Axis::Agent, Axis::Chunk, Axis::Scaffolds],
            SweepKind::RetryBudget => &[Axis::Agent, Axis::Budget],
            SweepKind::Tolerance => &[Axis::Agent, Axis::Tolerance],
            SweepKind::Pruning => &[Axis::Removed, Axis::Stages],
        }
    }

    pub fn coordinate_columns(&self) -> Vec<&'static str> {
        self.axes().iter().map(Axis::column).collect()
    }

    pub fn episodes_default(&self) -> u64 {
        match self {
            SweepKind::GuidancePool | SweepKind::PartialHarness => 50_000,
            _ => 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Agent,
    Stages,
    Tolerance,
    Budget,
    PoolSize,
    Policy,
    Chunk,
    Scaffolds,
    Removed,
}

impl Axis {
    /// Column name, which is also the config key.
    pub fn column(&self) -> &'static str {
        match self {
            Axis::Agent => "agent",
            Axis::Stages => "K",
            Axis::Tolerance => "epsilon",
            Axis::Budget => "R",
            Axis::PoolSize => "N",
            Axis::Policy => "policy",
            Axis::Chunk => "chunk",
            Axis::Scaffolds => "r",
            Axis::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPool {
    pub name: String,
    pub pool: ActionPool,
}

impl NamedPool {
    pub fn builtin(name: &str) -> Option<Self> {
        agents::by_name(name).map(|pool| Self {
            name: name.to_string(),
            pool,
        })
    }
}

/// A fully resolved sweep. Every axis is a list; axes that the kind does not
/// sweep hold exactly one value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub kind: SweepKind,
    pub total: i64,
    pub episodes: u64,
    pub master_seed: u64,
    pub agents: Vec<NamedPool>,
    pub stages: Vec<i64>,
    pub tolerances: Vec<i64>,
    pub budgets: Vec<u32>,
    pub pool_sizes: Vec<usize>,
    pub policies: Vec<GuidancePolicy>,
    pub chunks: Vec<i64>,
    pub scaffolds: Vec<i64>,
    pub removals: Vec<usize>,
    /// Target reliability for `m_alpha` in partial-harness slice models.
    pub alpha: f64,
    /// Keep per-episode summaries for every cell.
    pub per_episode: bool,
}

impl SweepSpec {
    /// Defaults for each experiment family.
    pub fn defaults(kind: SweepKind) -> Self {
        let standard = || ["small", "medium", "large"].iter().map(|n| NamedPool::builtin(n).unwrap()).collect();
        let mut spec = Self {
            name: kind.name().to_string(),
            kind,
            total: 100,
            episodes: kind.episodes_default(),
            master_seed: DEFAULT_SEED,
            agents: standard(),
            stages: GRANULARITY_STAGES.to_vec(),
            tolerances: vec![2],
            budgets: vec![4],
            pool_sizes: vec![1],
            policies: vec![GuidancePolicy::Aligned],
            chunks: vec![20],
            scaffolds: vec![0],
            removals: vec![0],
            alpha: 0.5,
            per_episode: false,
        };
        match kind {
            SweepKind::Granularity => {}
            SweepKind::GuidancePool => {
                spec.agents = vec![NamedPool::builtin("linear").unwrap()];
                spec.stages = vec![5];
                spec.tolerances = vec![4];
                spec.budgets = vec![5];
                spec.pool_sizes = (1..=10).collect();
                spec.policies = GuidancePolicy::ALL.to_vec();
            }
            SweepKind::PartialHarness => {
                spec.tolerances = vec![2];
                spec.budgets = vec![10];
                spec.scaffolds = (0..=5).collect();
                spec.stages = vec![1];
            }
            SweepKind::RetryBudget => {
                spec.stages = vec![4];
                spec.budgets = (1..=10).collect();
            }
            SweepKind::Tolerance => {
                spec.stages = vec![10];
                spec.tolerances = (0..=10).collect();
            }
            SweepKind::Pruning => {
                spec.agents = vec![NamedPool::builtin("pruning").unwrap()];
                spec.removals = vec![0, 1, 2];
            }
        }
        spec
    }

    fn axis_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Agent => self.agents.len(),
            Axis::Stages => self.stages.len(),
            Axis::Tolerance => self.tolerances.len(),
            Axis::Budget => self.budgets.len(),
            Axis::PoolSize => self.pool_sizes.len(),
            Axis::Policy => self.policies.len(),
            Axis::Chunk => self.chunks.len(),
            Axis::Scaffolds => self.scaffolds.len(),
            Axis::Removed => self.removals.len(),
        }
    }

    /// Structural checks; per-cell domain problems are reported by `run_sweep`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("sweep '{}': {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty and contain no path separators".into());
        }
        if self.total < 1 {
            return bad(format!("total must be >= 1, got {}", self.total));
        }
        if self.episodes < 1 {
            return bad("episodes must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let swept = self.kind.axes();
        for axis in [
            Axis::Agent,
            Axis::Stages,
            Axis::Tolerance,
            Axis::Budget,
            Axis::PoolSize,
            Axis::Policy,
            Axis::Chunk,
            Axis::Scaffolds,
            Axis::Removed,
        ] {
            let len = self.axis_len(axis);
            if len == 0 {
                return bad(format!("{} must not be empty", axis.column()));
            }
            if len > 1 && !swept.contains(&axis) {
                return bad(format!(
                    "{} takes a single value for kind {}",
                    axis.column(),
                    self.kind.name()
                ));
            }
        }
        let mut names: Vec<&str> = self.agents.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.agents.len() {
            return bad("agent names must be unique".into());
        }
        Ok(())
    }

    /// Number of cells.
    pub fn cell_count(&self) -> usize {
        self.kind.axes().iter().map(|a| self.axis_len(*a)).product()
    }
}

/// One evaluated point of a sweep.
#[derive(Debug, Clone)]
pub(crate) struct CellDef<'a> {
    pub coords: Vec<String>,
    pub agent: &'a NamedPool,
    pub stages: i64,
    pub tolerance: i64,
    pub budget: u32,
    pub pool_size: usize,
    pub policy: GuidancePolicy,
    pub chunk: i64,
    pub scaffolds: i64,
    pub removed: usize,
}

impl CellDef<'_> {
    fn label(&self, kind: SweepKind) -> String {
        kind.coordinate_columns()
            .iter()
            .zip(&self.coords)
            .map(|(c, v)| format!("{c}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub(crate) fn scenario(&self, kind: SweepKind, total: i64) -> Result<Scenario> {
        let config = StageConfig::new(self.tolerance, self.budget)?;
        let plan = match kind {
            SweepKind::PartialHarness => decompose_partial(total, self.chunk, self.scaffolds)?,
            _ => decompose_uniform(total, self.stages)?,
        };
        let scenario = Scenario::new(plan, config, self.agent.pool.clone(), self.policy);
        Ok(match kind {
            SweepKind::GuidancePool => scenario.with_shaping(PoolShaping::Keep(self.pool_size)),
            SweepKind::Pruning => scenario.with_shaping(PoolShaping::Remove(self.removed)),
            _ => scenario,
        })
    }
}

pub(crate) fn cells(spec: &SweepSpec) -> Vec<CellDef<'_>> {
    let base = CellDef {
        coords: Vec::new(),
        agent: &spec.agents[0],
        stages: spec.stages[0],
        tolerance: spec.tolerances[0],
        budget: spec.budgets[0],
        pool_size: spec.pool_sizes[0],
        policy: spec.policies[0],
        chunk: spec.chunks[0],
        scaffolds: spec.scaffolds[0],
        removed: spec.removals[0],
    };
    let mut out = vec![base];
    for axis in spec.kind.axes() {
        let mut next = Vec::with_capacity(out.len() * spec.axis_len(*axis));
        for cell in &out {
            for i in 0..spec.axis_len(*axis) {
                let mut c = cell.clone();
                let value = match axis {
                    Axis::Agent => {
                        c.agent = &spec.agents[i];
                        c.agent.name.clone()
                    }
                    Axis::Stages => {
                        c.stages = spec.stages[i];
                        c.stages.to_string()
                    }
                    Axis::Tolerance => {
                        c.tolerance = spec.tolerances[i];
                        c.tolerance.to_string()
                    }
                    Axis::Budget => {
                        c.budget = spec.budgets[i];
                        c.budget.to_string()
                    }
                    Axis::PoolSize => {
                        c.pool_size = spec.pool_sizes[i];
                        c.pool_size.to_string()
                    }
                    Axis::Policy => {
                        c.policy = spec.policies[i];
                        c.policy.name().to_string()
                    }
                    Axis::Chunk => {
                        c.chunk = spec.chunks[i];
                        c.chunk.to_string()
                    }
                    Axis::Scaffolds => {
                        c.scaffolds = spec.scaffolds[i];
                        c.scaffolds.to_string()
                    }
                    Axis::Removed => {
                        c.removed = spec.removals[i];
                        c.removed.to_string()
                    }
                };
                c.coords.push(value);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    /// Values in `SweepKind::coordinate_columns` order.
    pub coords: Vec<String>,
    pub batch: BatchResult,
    pub oracle_prob: Option<f64>,
    #[serde(skip)]
    pub episodes: Option<Vec<EpisodeSummary>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub coords: Vec<String>,
    pub pass_prob: Option<f64>,
    pub mean_abs_final_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub cell: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceEstimate {
    pub agent: String,
    pub chunk: i64,
    pub total: i64,
    pub alpha: f64,
    #[serde(skip)]
    pub model: SliceModel,
    /// Every stage probability came from the exact oracle.
    pub exact: bool,
    /// The scaffold-stage estimate used add-one smoothing.
    pub scaffold_smoothed: bool,
    pub convex: bool,
    pub m_peak: i64,
    pub m_alpha: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput<R> {
    pub name: String,
    pub kind: SweepKind,
    pub rows: Vec<R>,
    pub errors: Vec<CellError>,
    pub warnings: Vec<String>,
    pub slices: Vec<SliceEstimate>,
}

impl<R> SweepOutput<R> {
    pub fn columns(&self) -> Vec<&'static str> {
        self.kind.coordinate_columns()
    }
}

/// Exact episode quantities for a scenario; `None` when the state space or
/// subset count exceeds the oracle budget.
pub fn oracle_for(scenario: &Scenario) -> Result<Option<PassProbability>> {
    let r = match scenario.shaping {
        None => enumerate_pass_probability(&scenario.plan, &scenario.config, &scenario.pool, scenario.policy),
        Some(shaping) => enumerate_shaped_pass_probability(
            &scenario.plan,
            &scenario.config,
            &scenario.pool,
            scenario.policy,
            shaping,
        ),
    };
    match r {
        Ok(p) => Ok(Some(p)),
        Err(Error::StateSpaceOverflow { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn warnings_for(label: &str, scenario: &Scenario) -> Vec<String> {
    validate_plan(&scenario.plan, &scenario.config, &scenario.pool)
        .into_iter()
        .map(|w| format!("{label}: {w}"))
        .collect()
}

/// Evaluates every cell by Monte Carlo and attaches the exact pass
/// probability where enumerable. Cell-level failures are collected, not
/// propagated.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput<CellResult>> {
    spec.validate()?;
    let mut out = SweepOutput {
        name: spec.name.clone(),
        kind: spec.kind,
        rows: Vec::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
        slices: Vec::new(),
    };
    for cell in cells(spec) {
        let label = cell.label(spec.kind);
        let evaluated = cell.scenario(spec.kind, spec.total).and_then(|scenario| {
            let warnings = warnings_for(&label, &scenario);
            let summaries = simulate_episodes(&scenario, spec.episodes, spec.master_seed)?;
            let oracle = oracle_for(&scenario)?;
            Ok((warnings, summaries, oracle))
        });
        match evaluated {
            Ok((warnings, summaries, oracle)) => {
                out.warnings.extend(warnings);
                out.rows.push(CellResult {
                    coords: cell.coords.clone(),
                    batch: summarize(&summaries),
                    oracle_prob: oracle.map(|o| o.episode_prob),
                    episodes: spec.per_episode.then_some(summaries),
                });
            }
            Err(e) => out.errors.push(CellError {
                cell: label,
                message: e.to_string(),
            }),
        }
    }
    if spec.kind == SweepKind::PartialHarness {
        attach_slices(spec, &mut out);
    }
    Ok(out)
}

/// Exact tables only, no Monte Carlo.
pub fn run_oracle_sweep(spec: &SweepSpec) -> Result<SweepOutput<OracleRow>> {
    spec.validate()?;
    let mut out = SweepOutput {
        name: spec.name.clone(),
        kind: spec.kind,
        rows: Vec::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
        slices: Vec::new(),
    };
    for cell in cells(spec) {
        let label = cell.label(spec.kind);
        let evaluated = cell
            .scenario(spec.kind, spec.total)
            .and_then(|s| Ok((warnings_for(&label, &s), oracle_for(&s)?)));
        match evaluated {
            Ok((warnings, oracle)) => {
                out.warnings.extend(warnings);
                out.rows.push(OracleRow {
                    coords: cell.coords.clone(),
                    pass_prob: oracle.as_ref().map(|o| o.episode_prob),
                    mean_abs_final_bias: oracle.as_ref().and_then(PassProbability::mean_bias),
                });
            }
            Err(e) => out.errors.push(CellError {
                cell: label,
                message: e.to_string(),
            }),
        }
    }
    if spec.kind == SweepKind::PartialHarness {
        attach_slices(spec, &mut out);
    }
    Ok(out)
}

fn attach_slices<R>(spec: &SweepSpec, out: &mut SweepOutput<R>) {
    for agent in &spec.agents {
        for &chunk in &spec.chunks {
            let config = match StageConfig::new(spec.tolerances[0], spec.budgets[0]) {
                Ok(c) => c,
                Err(e) => {
                    out.errors.push(CellError {
                        cell: format!("slice agent={} chunk={chunk}", agent.name),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            match estimate_slice_model(
                agent,
                chunk,
                spec.total,
                &config,
                spec.policies[0],
                spec.episodes,
                spec.master_seed,
                spec.alpha,
            ) {
                Ok(s) => out.slices.push(s),
                Err(e) => out.errors.push(CellError {
                    cell: format!("slice agent={} chunk={chunk}", agent.name),
                    message: e.to_string(),
                }),
            }
        }
    }
}

/// Stage success probability at one goal: exact when enumerable, otherwise a
/// Monte Carlo estimate with add-one smoothing on zero successes.
fn stage_success(
    goal: i64,
    pool: &ActionPool,
    config: &StageConfig,
    policy: GuidancePolicy,
    episodes: u64,
    master_seed: u64,
) -> Result<(f64, bool, bool)> {
    match enumerate_stage(goal, config, pool, policy) {
        Ok(dp) => return Ok((dp.success_prob, true, false)),
        Err(Error::StateSpaceOverflow { .. }) => {}
        Err(e) => return Err(e),
    }
    let scenario = Scenario::new(HarnessPlan::new(vec![goal])?, *config, pool.clone(), policy);
    let batch = summarize(&simulate_episodes(&scenario, episodes, master_seed)?);
    if batch.successes == 0 {
        Ok((1.0 / (episodes as f64 + 2.0), false, true))
    } else {
        Ok((batch.pass_rate, false, false))
    }
}

/// Slice model from single-stage success rates at the chunk size and at every
/// grid residual `total − m·chunk`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_slice_model(
    agent: &NamedPool,
    chunk: i64,
    total: i64,
    config: &StageConfig,
    policy: GuidancePolicy,
    episodes: u64,
    master_seed: u64,
    alpha: f64,
) -> Result<SliceEstimate> {
    if chunk < 1 || chunk > total {
        return Err(Error::InvalidArgument(format!("chunk must lie in 1..={total}, got {chunk}")));
    }
    if episodes < 1 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let (p_scaf, mut exact, scaf_smoothed) = stage_success(chunk, &agent.pool, config, policy, episodes, master_seed)?;
    let mut kappa = BTreeMap::new();
    let mut flags = BTreeMap::new();
    for m in 0..=total / chunk {
        let d = total - m * chunk;
        if d == 0 {
            continue;
        }
        let (p, ex, smoothed) = stage_success(d, &agent.pool, config, policy, episodes, master_seed)?;
        exact &= ex;
        kappa.insert(d, -p.ln());
        flags.insert(d, smoothed);
    }
    let mut model = SliceModel::new(chunk, total, -p_scaf.ln(), kappa)?;
    for (d, f) in flags {
        model.smoothed_flags.insert(d, f);
    }
    let convex = check_discrete_convexity(&model.objective_values());
    Ok(SliceEstimate {
        agent: agent.name.clone(),
        chunk,
        total,
        alpha,
        m_peak: find_m_peak(&model),
        m_alpha: find_m_alpha(&model, alpha)?,
        convex,
        exact,
        scaffold_smoothed: scaf_smoothed,
        model,
    })
}
