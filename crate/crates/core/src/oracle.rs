//! Exact computation on the simulator's finite state space.
//!
//! A stage is an absorbing Markov chain over `(progress, draws_used)`; the
//! policy picks an action law from the within-stage residual only, so stages
//! are independent given the plan and episode quantities follow by products
//! and convolutions.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::domain::{ActionPool, GuidancePolicy, HarnessPlan, StageConfig};
use crate::error::{Error, Result};
use crate::guidance::{deterministic_choice, PoolShaping};
use crate::sampling::action_pmf;
use crate::theory::{filtered_recoverability, retention_gap, FilteredRecoverability, FilteringInstance, RetentionGap};

/// Upper bound on `(goal + tolerance) × draw_budget` per stage.
pub const STATE_LIMIT: u64 = 10_000_000;

/// Upper bound on the number of pool subsets averaged for shaped pools.
pub const SUBSET_LIMIT: u64 = 20_000;

/// Compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// Integer action law on `lower..lower + masses.len()`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepLaw {
    lower: i64,
    masses: Vec<f64>,
}

impl StepLaw {
    fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(move |(i, &m)| (self.lower + i as i64, m))
    }

    fn mass(&self, a: i64) -> f64 {
        let i = a - self.lower;
        if i < 0 || i as usize >= self.masses.len() {
            0.0
        } else {
            self.masses[i as usize]
        }
    }
}

/// Per-residual action laws induced by a policy over a pool.
#[derive(Debug, Clone)]
pub(crate) struct PolicyLaws {
    pool: ActionPool,
    laws: Vec<StepLaw>,
    mixture: StepLaw,
    policy: GuidancePolicy,
}

impl PolicyLaws {
    pub(crate) fn new(pool: &ActionPool, policy: GuidancePolicy) -> Result<Self> {
        let laws = pool
            .dists()
            .iter()
            .map(|d| {
                let pmf = action_pmf(d)?;
                Ok(StepLaw {
                    lower: pmf.lower(),
                    masses: pmf.masses().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let lower = pool.min_lower();
        let upper = pool.max_upper();
        let mut mix = vec![KahanSum::default(); (upper - lower + 1) as usize];
        let w = 1.0 / laws.len() as f64;
        for law in &laws {
            for (a, m) in law.iter() {
                mix[(a - lower) as usize].add(w * m);
            }
        }
        let mixture = StepLaw {
            lower,
            masses: mix.iter().map(KahanSum::value).collect(),
        };
        Ok(Self {
            pool: pool.clone(),
            laws,
            mixture,
            policy,
        })
    }

    pub(crate) fn law(&self, residual: i64) -> &StepLaw {
        match deterministic_choice(&self.pool, residual, self.policy) {
            Some(i) => &self.laws[i],
            None => &self.mixture,
        }
    }
}

/// Exact solution of one stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageDp {
    pub goal: i64,
    pub tolerance: i64,
    pub draw_budget: u32,
    pub success_prob: f64,
    pub overshoot_prob: f64,
    pub drawlimit_prob: f64,
    /// Law of `final_progress − goal` given success; empty if success is impossible.
    pub deviation_pmf: BTreeMap<i64, f64>,
    #[serde(skip)]
    live_width: usize,
    #[serde(skip)]
    recoverability: Vec<f64>,
}

impl StageDp {
    /// Probability of eventual stage success from a live state, `None` if the
    /// state is not live (already absorbed or out of range).
    pub fn recoverability(&self, progress: i64, draws_used: u32) -> Option<f64> {
        if progress < 0 || progress as usize >= self.live_width || draws_used >= self.draw_budget {
            return None;
        }
        if draws_used > 0 && progress >= self.goal - self.tolerance {
            return None;
        }
        Some(self.recoverability[draws_used as usize * self.live_width + progress as usize])
    }

    /// Whether `(progress, draws_used)` is a state from which the stage still draws.
    pub fn is_live(&self, progress: i64, draws_used: u32) -> bool {
        self.recoverability(progress, draws_used).is_some()
    }

    pub fn mean_deviation(&self) -> f64 {
        self.deviation_pmf.iter().map(|(&d, &p)| d as f64 * p).sum()
    }
}

fn live_width(goal: i64, tolerance: i64) -> usize {
    (goal - tolerance).max(1) as usize
}

pub(crate) fn solve_stage(goal: i64, config: &StageConfig, laws: &PolicyLaws) -> Result<StageDp> {
    if goal < 1 {
        return Err(Error::InvalidPlan(format!("stage goal must be >= 1, got {goal}")));
    }
    config.validate()?;
    let states = (goal + config.tolerance) as u64 * config.draw_budget as u64;
    if states > STATE_LIMIT {
        return Err(Error::StateSpaceOverflow {
            states,
            limit: STATE_LIMIT,
        });
    }
    let tol = config.tolerance;
    let budget = config.draw_budget as usize;
    let width = live_width(goal, tol);
    let (win_lo, win_hi) = (goal - tol, goal + tol);

    // Forward pass: draws outermost, progress innermost.
    let mut layer = vec![0.0f64; width];
    layer[0] = 1.0;
    let mut success = vec![KahanSum::default(); (2 * tol + 1) as usize];
    let mut overshoot = KahanSum::default();
    let mut drawlimit = KahanSum::default();
    for d in 0..budget {
        let mut next = vec![KahanSum::default(); width];
        for (p, &mass) in layer.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let p = p as i64;
            for (a, m) in laws.law(goal - p).iter() {
                let q = p + a;
                let flow = mass * m;
                if q >= win_lo && q <= win_hi {
                    success[(q - win_lo) as usize].add(flow);
                } else if q > win_hi {
                    overshoot.add(flow);
                } else if d + 1 == budget {
                    drawlimit.add(flow);
                } else {
                    next[q as usize].add(flow);
                }
            }
        }
        layer = next.iter().map(KahanSum::value).collect();
    }
    let mut total_success = KahanSum::default();
    for s in &success {
        total_success.add(s.value());
    }
    // No failure mass at all means success is certain; the success sum can
    // fall short of 1 only by pmf rounding.
    let certain = overshoot.value() == 0.0 && drawlimit.value() == 0.0;
    let success_prob = if certain { 1.0 } else { total_success.value() };
    let deviation_pmf = if success_prob > 0.0 {
        success
            .iter()
            .enumerate()
            .filter(|(_, s)| s.value() > 0.0)
            .map(|(i, s)| (i as i64 - tol, s.value() / total_success.value()))
            .collect()
    } else {
        BTreeMap::new()
    };

    // Backward pass: probability of eventual success from each live state.
    let mut rec = vec![0.0f64; budget * width];
    for d in (0..budget).rev() {
        for p in 0..width {
            let pi = p as i64;
            let mut acc = KahanSum::default();
            let mut can_fail = false;
            for (a, m) in laws.law(goal - pi).iter() {
                let q = pi + a;
                if q >= win_lo && q <= win_hi {
                    acc.add(m);
                } else if q < win_lo && d + 1 < budget {
                    let r = rec[(d + 1) * width + q as usize];
                    can_fail |= r != 1.0;
                    acc.add(m * r);
                } else {
                    can_fail = true;
                }
            }
            rec[d * width + p] = if can_fail { acc.value() } else { 1.0 };
        }
    }

    Ok(StageDp {
        goal,
        tolerance: tol,
        draw_budget: config.draw_budget,
        success_prob,
        overshoot_prob: overshoot.value(),
        drawlimit_prob: drawlimit.value(),
        deviation_pmf,
        live_width: width,
        recoverability: rec,
    })
}

/// Exact stage solution for a goal under a policy.
pub fn enumerate_stage(goal: i64, config: &StageConfig, pool: &ActionPool, policy: GuidancePolicy) -> Result<StageDp> {
    solve_stage(goal, config, &PolicyLaws::new(pool, policy)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PassProbability {
    pub episode_prob: f64,
    pub per_stage: Vec<f64>,
    /// Law of the absolute final bias given episode success.
    pub bias_pmf: BTreeMap<i64, f64>,
}

impl PassProbability {
    pub fn mean_bias(&self) -> Option<f64> {
        if self.bias_pmf.is_empty() {
            None
        } else {
            Some(self.bias_pmf.iter().map(|(&b, &p)| b as f64 * p).sum())
        }
    }
}

fn stage_table(plan: &HarnessPlan, config: &StageConfig, laws: &PolicyLaws) -> Result<HashMap<i64, StageDp>> {
    let mut table = HashMap::new();
    for &goal in plan.subgoals() {
        if let std::collections::hash_map::Entry::Vacant(e) = table.entry(goal) {
            e.insert(solve_stage(goal, config, laws)?);
        }
    }
    Ok(table)
}

fn convolve(a: &BTreeMap<i64, f64>, b: &BTreeMap<i64, f64>) -> BTreeMap<i64, f64> {
    let mut out: BTreeMap<i64, KahanSum> = BTreeMap::new();
    for (&x, &p) in a {
        for (&y, &q) in b {
            out.entry(x + y).or_default().add(p * q);
        }
    }
    out.into_iter().map(|(k, v)| (k, v.value())).collect()
}

fn fold_abs(signed: &BTreeMap<i64, f64>) -> BTreeMap<i64, f64> {
    let mut out: BTreeMap<i64, KahanSum> = BTreeMap::new();
    for (&d, &p) in signed {
        out.entry(d.abs()).or_default().add(p);
    }
    out.into_iter().map(|(k, v)| (k, v.value())).collect()
}

fn pass_probability_with(plan: &HarnessPlan, config: &StageConfig, laws: &PolicyLaws) -> Result<PassProbability> {
    let table = stage_table(plan, config, laws)?;
    let per_stage: Vec<f64> = plan.subgoals().iter().map(|g| table[g].success_prob).collect();
    let episode_prob = per_stage.iter().product();
    let bias_pmf = if episode_prob > 0.0 {
        let mut signed = BTreeMap::from([(0i64, 1.0f64)]);
        for g in plan.subgoals() {
            signed = convolve(&signed, &table[g].deviation_pmf);
        }
        fold_abs(&signed)
    } else {
        BTreeMap::new()
    };
    Ok(PassProbability {
        episode_prob,
        per_stage,
        bias_pmf,
    })
}

/// Exact episode pass probability, per-stage success probabilities, and the
/// final-bias law on success.
pub fn enumerate_pass_probability(
    plan: &HarnessPlan,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
) -> Result<PassProbability> {
    pass_probability_with(plan, config, &PolicyLaws::new(pool, policy)?)
}

/// Exact quantities averaged over the uniformly random pool subsets produced
/// by `shaping`. `per_stage` holds subset-averaged stage probabilities and
/// `bias_pmf` is the bias law given success under the subset mixture.
pub fn enumerate_shaped_pass_probability(
    plan: &HarnessPlan,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
    shaping: PoolShaping,
) -> Result<PassProbability> {
    let n = pool.len();
    let k = shaping.retained(n)?;
    let count = binomial(n as u64, k as u64);
    if count > SUBSET_LIMIT {
        return Err(Error::StateSpaceOverflow {
            states: count,
            limit: SUBSET_LIMIT,
        });
    }
    let w = 1.0 / count as f64;
    let mut prob = KahanSum::default();
    let mut per_stage = vec![KahanSum::default(); plan.stages()];
    let mut bias: BTreeMap<i64, KahanSum> = BTreeMap::new();
    for subset in combinations(n, k) {
        let sub = ActionPool::new(subset.iter().map(|&i| pool.dists()[i]).collect())?;
        let r = enumerate_pass_probability(plan, config, &sub, policy)?;
        prob.add(w * r.episode_prob);
        for (acc, p) in per_stage.iter_mut().zip(&r.per_stage) {
            acc.add(w * p);
        }
        for (b, p) in &r.bias_pmf {
            bias.entry(*b).or_default().add(w * r.episode_prob * p);
        }
    }
    let episode_prob = prob.value();
    let bias_pmf = if episode_prob > 0.0 {
        bias.into_iter()
            .map(|(b, p)| (b, p.value() / episode_prob))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(PassProbability {
        episode_prob,
        per_stage: per_stage.iter().map(KahanSum::value).collect(),
        bias_pmf,
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - k + i {
                current[i] += 1;
                for j in i + 1..k {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Result of recomputing the episode probability through the joint chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainRuleReport {
    /// `P(E_t)` from the joint chain over global cumulative progress.
    pub cumulative: Vec<f64>,
    /// `P(B_t | B_<t)` implied by the joint chain.
    pub conditionals: Vec<f64>,
    /// Direct per-stage success probabilities.
    pub direct: Vec<f64>,
    /// Law of `|Σ progress − total|` on success from the joint chain.
    pub joint_bias_pmf: BTreeMap<i64, f64>,
    /// Max over `t` of `|Π_{s≤t} conditional_s − Π_{s≤t} direct_s|`.
    pub max_residual: f64,
}

/// Runs the whole episode as one chain over global cumulative progress,
/// reads off the conditional stage-recoverability probabilities, and compares
/// their running product against the product of independently solved stages.
pub fn chain_rule_report(
    plan: &HarnessPlan,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
) -> Result<ChainRuleReport> {
    let laws = PolicyLaws::new(pool, policy)?;
    let table = stage_table(plan, config, &laws)?;
    let tol = config.tolerance;
    let budget = config.draw_budget as usize;

    // Mass of E_t over global cumulative progress at the end of stage t.
    let mut entry: BTreeMap<i64, f64> = BTreeMap::from([(0, 1.0)]);
    let mut cumulative = Vec::with_capacity(plan.stages());
    let mut conditionals = Vec::with_capacity(plan.stages());
    let mut prev = 1.0f64;
    for &goal in plan.subgoals() {
        let mut exit: BTreeMap<i64, KahanSum> = BTreeMap::new();
        for (&start, &mass) in &entry {
            // progress restarts at each stage: local progress is c − start
            let mut layer: BTreeMap<i64, f64> = BTreeMap::from([(start, mass)]);
            for d in 0..budget {
                let mut next: BTreeMap<i64, KahanSum> = BTreeMap::new();
                for (&c, &m) in &layer {
                    for (a, pa) in laws.law(goal - (c - start)).iter() {
                        let c2 = c + a;
                        let local = c2 - start;
                        let flow = m * pa;
                        if (local - goal).abs() <= tol {
                            exit.entry(c2).or_default().add(flow);
                        } else if local < goal - tol && d + 1 < budget {
                            next.entry(c2).or_default().add(flow);
                        }
                    }
                }
                layer = next.into_iter().map(|(k, v)| (k, v.value())).collect();
            }
        }
        entry = exit.into_iter().map(|(k, v)| (k, v.value())).collect();
        let mut total = KahanSum::default();
        for v in entry.values() {
            total.add(*v);
        }
        let now = total.value();
        cumulative.push(now);
        conditionals.push(if prev > 0.0 { now / prev } else { 0.0 });
        prev = now;
    }
    let direct: Vec<f64> = plan.subgoals().iter().map(|g| table[g].success_prob).collect();
    let mut max_residual = 0.0f64;
    let (mut chain, mut prod) = (1.0f64, 1.0f64);
    for (c, d) in conditionals.iter().zip(&direct) {
        chain *= c;
        prod *= d;
        max_residual = max_residual.max((chain - prod).abs());
    }
    let total = plan.total();
    let mut joint_bias: BTreeMap<i64, KahanSum> = BTreeMap::new();
    if prev > 0.0 {
        for (&c, &m) in &entry {
            joint_bias.entry((c - total).abs()).or_default().add(m / prev);
        }
    }
    Ok(ChainRuleReport {
        cumulative,
        conditionals,
        direct,
        joint_bias_pmf: joint_bias.into_iter().map(|(k, v)| (k, v.value())).collect(),
        max_residual,
    })
}

/// Max discrepancy between the chain-rule product and the direct product.
pub fn chain_rule_check(plan: &HarnessPlan, config: &StageConfig, pool: &ActionPool, policy: GuidancePolicy) -> Result<f64> {
    Ok(chain_rule_report(plan, config, pool, policy)?.max_residual)
}

/// One-step retention analysis at a live stage state.
#[derive(Debug, Clone, Serialize)]
pub struct RetentionReport {
    /// Candidate next actions, aligned with the instance vectors.
    pub actions: Vec<i64>,
    pub instance: FilteringInstance,
    pub gap: RetentionGap,
    pub filtered: FilteredRecoverability,
    /// `Σ_{a recoverable} policy(a)` computed directly from the policy law.
    pub direct: f64,
    /// `Q₀(R)` under the uniform-mixture base.
    pub base: f64,
}

/// Builds the one-step filtering instance at `state = (progress, draws_used)`:
/// base law = uniform mixture over the pool, weights = policy law / base law,
/// and an action is recoverable if it finishes the stage or leads to a live
/// state from which success still has positive probability under the base.
pub fn stage_retention_gap(
    goal: i64,
    config: &StageConfig,
    pool: &ActionPool,
    policy: GuidancePolicy,
    state: (i64, u32),
) -> Result<RetentionReport> {
    let (progress, draws) = state;
    let base_laws = PolicyLaws::new(pool, GuidancePolicy::UniformRandom)?;
    let base_dp = solve_stage(goal, config, &base_laws)?;
    if !base_dp.is_live(progress, draws) {
        return Err(Error::InvalidArgument(format!(
            "state ({progress}, {draws}) is not live for goal {goal}"
        )));
    }
    let policy_laws = PolicyLaws::new(pool, policy)?;
    let residual = goal - progress;
    let base = base_laws.law(residual);
    let guided = policy_laws.law(residual);
    let tol = config.tolerance;

    let mut actions = Vec::new();
    let mut base_probs = Vec::new();
    let mut weights = Vec::new();
    let mut recoverable = Vec::new();
    let mut direct = KahanSum::default();
    for (a, q) in base.iter() {
        let next = progress + a;
        let rec = if (next - goal).abs() <= tol {
            true
        } else {
            base_dp.recoverability(next, draws + 1).is_some_and(|r| r > 0.0)
        };
        let g = guided.mass(a);
        if rec {
            direct.add(g);
        }
        actions.push(a);
        base_probs.push(q);
        weights.push(g / q);
        recoverable.push(rec);
    }
    let instance = FilteringInstance::new(base_probs, weights, recoverable).map_err(|e| {
        Error::InvalidInstance(format!(
            "degenerate base recoverability at state ({progress}, {draws}); the identity does not apply: {e}"
        ))
    })?;
    Ok(RetentionReport {
        actions,
        gap: retention_gap(&instance)?,
        filtered: filtered_recoverability(&instance)?,
        base: instance.base_recoverable_mass(),
        direct: direct.value(),
        instance,
    })
}
