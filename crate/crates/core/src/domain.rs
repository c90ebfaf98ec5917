//! Core value types: action distributions, pools, harness plans, stage
//! configuration, and the canonical pools used by the experiments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Gaussian action model truncated to the integer interval `[lower, upper]`.
///
/// Draws are rounded to the nearest integer and clipped back into the bounds,
/// so the induced action support is exactly `lower..=upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct TruncatedGaussianSpec {
    mu: f64,
    sigma: f64,
    lower: i64,
    upper: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    mu: f64,
    sigma: f64,
    lower: i64,
    upper: i64,
}

impl TryFrom<RawSpec> for TruncatedGaussianSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.mu, raw.sigma, raw.lower, raw.upper)
    }
}

impl TruncatedGaussianSpec {
    pub fn new(mu: f64, sigma: f64, lower: i64, upper: i64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidSpec(format!("mu must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSpec(format!("sigma must be > 0, got {sigma}")));
        }
        if lower < 1 {
            return Err(Error::InvalidSpec(format!("lower must be >= 1, got {lower}")));
        }
        if upper < lower {
            return Err(Error::InvalidSpec(format!(
                "upper ({upper}) must be >= lower ({lower})"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            lower,
            upper,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lower(&self) -> i64 {
        self.lower
    }

    pub fn upper(&self) -> i64 {
        self.upper
    }

    /// Integer actions this distribution can produce.
    pub fn support(&self) -> std::ops::RangeInclusive<i64> {
        self.lower..=self.upper
    }
}

impl fmt::Display for TruncatedGaussianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TN(mu={}, sigma={}, [{}, {}])",
            self.mu, self.sigma, self.lower, self.upper
        )
    }
}

/// Ordered, non-empty set of candidate action distributions. Indices are
/// identities: tie-breaking everywhere prefers the lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TruncatedGaussianSpec>", into = "Vec<TruncatedGaussianSpec>")]
pub struct ActionPool {
    dists: Vec<TruncatedGaussianSpec>,
}

impl TryFrom<Vec<TruncatedGaussianSpec>> for ActionPool {
    type Error = Error;

    fn try_from(dists: Vec<TruncatedGaussianSpec>) -> Result<Self> {
        Self::new(dists)
    }
}

impl From<ActionPool> for Vec<TruncatedGaussianSpec> {
    fn from(pool: ActionPool) -> Self {
        pool.dists
    }
}

impl ActionPool {
    pub fn new(dists: Vec<TruncatedGaussianSpec>) -> Result<Self> {
        if dists.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(Self { dists })
    }

    pub fn single(spec: TruncatedGaussianSpec) -> Self {
        Self { dists: vec![spec] }
    }

    pub fn dists(&self) -> &[TruncatedGaussianSpec] {
        &self.dists
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<&TruncatedGaussianSpec> {
        self.dists.get(index)
    }

    pub fn max_upper(&self) -> i64 {
        self.dists.iter().map(|d| d.upper).max().unwrap_or(0)
    }

    pub fn min_lower(&self) -> i64 {
        self.dists.iter().map(|d| d.lower).min().unwrap_or(0)
    }
}

/// Ordered positive subgoals whose sum is the task total.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarnessPlan {
    subgoals: Vec<i64>,
    total: i64,
}

impl HarnessPlan {
    pub fn new(subgoals: Vec<i64>) -> Result<Self> {
        if subgoals.is_empty() {
            return Err(Error::InvalidPlan("plan has no subgoals".into()));
        }
        if let Some((i, g)) = subgoals.iter().enumerate().find(|(_, g)| **g < 1) {
            return Err(Error::InvalidPlan(format!(
                "subgoal {i} is {g}; every subgoal must be >= 1"
            )));
        }
        let total = subgoals.iter().sum();
        Ok(Self { subgoals, total })
    }

    pub fn subgoals(&self) -> &[i64] {
        &self.subgoals
    }

    pub fn total(&self) -> i64 {
        self.total
    }

    pub fn stages(&self) -> usize {
        self.subgoals.len()
    }
}

/// Per-stage acceptance tolerance and draw budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageConfig {
    pub tolerance: i64,
    pub draw_budget: u32,
}

impl StageConfig {
    pub fn new(tolerance: i64, draw_budget: u32) -> Result<Self> {
        let config = Self {
            tolerance,
            draw_budget,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tolerance < 0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if self.draw_budget < 1 {
            return Err(Error::InvalidConfig("draw budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// How the agent picks a distribution from the pool before each draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePolicy {
    /// Mean closest to the residual goal.
    Aligned,
    /// Mean farthest from the residual goal.
    Misaligned,
    /// Uniformly random index.
    #[serde(rename = "uniform")]
    UniformRandom,
}

impl GuidancePolicy {
    pub const ALL: [GuidancePolicy; 3] = [
        GuidancePolicy::Aligned,
        GuidancePolicy::Misaligned,
        GuidancePolicy::UniformRandom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GuidancePolicy::Aligned => "aligned",
            GuidancePolicy::Misaligned => "misaligned",
            GuidancePolicy::UniformRandom => "uniform",
        }
    }
}

impl fmt::Display for GuidancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Splits `total` into `stages` near-equal subgoals; the remainder goes one
/// unit each to the earliest stages.
pub fn decompose_uniform(total: i64, stages: i64) -> Result<HarnessPlan> {
    if stages < 1 {
        return Err(Error::InvalidPlan(format!("stages must be >= 1, got {stages}")));
    }
    if total < stages {
        return Err(Error::InvalidPlan(format!(
            "total {total} < stages {stages} would force a zero subgoal"
        )));
    }
    let base = total / stages;
    let extra = total % stages;
    let subgoals = (0..stages)
        .map(|i| if i < extra { base + 1 } else { base })
        .collect();
    HarnessPlan::new(subgoals)
}

/// `scaffold_count` chunks of size `chunk`, then the residual (omitted if 0).
pub fn decompose_partial(total: i64, chunk: i64, scaffold_count: i64) -> Result<HarnessPlan> {
    if chunk < 1 {
        return Err(Error::InvalidPlan(format!("chunk must be >= 1, got {chunk}")));
    }
    if scaffold_count < 0 {
        return Err(Error::InvalidPlan(format!(
            "scaffold count must be >= 0, got {scaffold_count}"
        )));
    }
    let residual = total - chunk * scaffold_count;
    if residual < 0 {
        return Err(Error::InvalidPlan(format!(
            "{scaffold_count} chunks of {chunk} exceed total {total}"
        )));
    }
    let mut subgoals = vec![chunk; scaffold_count as usize];
    if residual > 0 {
        subgoals.push(residual);
    }
    HarnessPlan::new(subgoals)
}

/// The ten-distribution pool with linearly growing mean and spread.
pub fn build_linear_pool(count: usize) -> Result<ActionPool> {
    if count == 0 {
        return Err(Error::EmptyPool);
    }
    let dists = (0..count)
        .map(|i| {
            let i = i as f64;
            let mu = 4.0 + 1.2 * i;
            let sigma = 1.5 + 0.35 * i;
            let lower = ((mu - 2.0).floor() as i64).max(1);
            let upper = (mu + 2.0 * sigma).ceil() as i64;
            TruncatedGaussianSpec::new(mu, sigma, lower, upper)
        })
        .collect::<Result<Vec<_>>>()?;
    ActionPool::new(dists)
}

/// A statically detectable plan pathology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanWarning {
    Unreachable {
        stage: usize,
        subgoal: i64,
        draw_budget: u32,
        max_action: i64,
        tolerance: i64,
    },
    ForcedOvershoot {
        stage: usize,
        subgoal: i64,
        min_action: i64,
        tolerance: i64,
    },
}

impl fmt::Display for PlanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanWarning::Unreachable {
                stage,
                subgoal,
                draw_budget,
                max_action,
                tolerance,
            } => write!(
                f,
                "stage {stage} unreachable: {subgoal} > {draw_budget}·{max_action}+{tolerance}"
            ),
            PlanWarning::ForcedOvershoot {
                stage,
                subgoal,
                min_action,
                tolerance,
            } => write!(
                f,
                "stage {stage} forced overshoot: {subgoal} < {min_action}−{tolerance}"
            ),
        }
    }
}

pub fn validate_plan(plan: &HarnessPlan, config: &StageConfig, pool: &ActionPool) -> Vec<PlanWarning> {
    let max_action = pool.max_upper();
    let min_action = pool.min_lower();
    let reach = config.draw_budget as i64 * max_action + config.tolerance;
    let mut warnings = Vec::new();
    for (stage, &subgoal) in plan.subgoals().iter().enumerate() {
        if subgoal > reach {
            warnings.push(PlanWarning::Unreachable {
                stage,
                subgoal,
                draw_budget: config.draw_budget,
                max_action,
                tolerance: config.tolerance,
            });
        }
        if subgoal < min_action - config.tolerance {
            warnings.push(PlanWarning::ForcedOvershoot {
                stage,
                subgoal,
                min_action,
                tolerance: config.tolerance,
            });
        }
    }
    warnings
}

/// Named single-distribution agents and composite pools used by the sweeps.
pub mod agents {
    use super::*;

    pub fn small() -> TruncatedGaussianSpec {
        TruncatedGaussianSpec::new(6.0, 2.0, 4, 8).expect("valid")
    }

    pub fn medium() -> TruncatedGaussianSpec {
        TruncatedGaussianSpec::new(8.0, 3.0, 5, 11).expect("valid")
    }

    pub fn large() -> TruncatedGaussianSpec {
        TruncatedGaussianSpec::new(10.0, 4.0, 6, 14).expect("valid")
    }

    /// The three-model pool that the pruning experiment removes from.
    pub fn pruning_pool() -> ActionPool {
        ActionPool::new(vec![
            small(),
            medium(),
            TruncatedGaussianSpec::new(10.0, 6.0, 4, 14).expect("valid"),
        ])
        .expect("non-empty")
    }

    pub const STANDARD: [&str; 3] = ["small", "medium", "large"];

    /// Resolves a named pool. Single agents become singleton pools.
    pub fn by_name(name: &str) -> Option<ActionPool> {
        match name {
            "small" => Some(ActionPool::single(small())),
            "medium" => Some(ActionPool::single(medium())),
            "large" => Some(ActionPool::single(large())),
            "pruning" => Some(pruning_pool()),
            "linear" => build_linear_pool(10).ok(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(specs: &[(f64, f64, i64, i64)]) -> ActionPool {
        ActionPool::new(
            specs
                .iter()
                .map(|&(m, s, l, u)| TruncatedGaussianSpec::new(m, s, l, u).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_splits() {
        assert_eq!(decompose_uniform(100, 4).unwrap().subgoals(), &[25, 25, 25, 25]);
        assert_eq!(decompose_uniform(10, 1).unwrap().subgoals(), &[10]);
        assert_eq!(decompose_uniform(100, 3).unwrap().subgoals(), &[34, 33, 33]);
        assert_eq!(decompose_uniform(100, 7).unwrap().subgoals(), &[15, 15, 14, 14, 14, 14, 14]);
    }

    #[test]
    fn uniform_split_errors() {
        assert!(decompose_uniform(100, 0).is_err());
        assert!(decompose_uniform(100, -2).is_err());
        assert!(decompose_uniform(3, 4).is_err());
    }

    #[test]
    fn partial_plans() {
        assert_eq!(decompose_partial(100, 20, 3).unwrap().subgoals(), &[20, 20, 20, 40]);
        assert_eq!(decompose_partial(100, 20, 0).unwrap().subgoals(), &[100]);
        assert_eq!(decompose_partial(100, 20, 5).unwrap().subgoals(), &[20, 20, 20, 20, 20]);
        assert!(decompose_partial(100, 20, 6).is_err());
        assert!(decompose_partial(100, 0, 1).is_err());
        assert!(decompose_partial(100, -5, 1).is_err());
    }

    #[test]
    fn linear_pool_members() {
        let p = build_linear_pool(10).unwrap();
        let check = |i: usize, mu: f64, sigma: f64, lo: i64, hi: i64| {
            let d = p.get(i).unwrap();
            assert!((d.mu() - mu).abs() < 1e-12, "mu_{i}");
            assert!((d.sigma() - sigma).abs() < 1e-12, "sigma_{i}");
            assert_eq!((d.lower(), d.upper()), (lo, hi), "bounds_{i}");
        };
        check(0, 4.0, 1.5, 2, 7);
        check(5, 10.0, 3.25, 8, 17);
        check(9, 14.8, 4.65, 12, 25);
        assert!(build_linear_pool(0).is_err());
        assert_eq!(build_linear_pool(10).unwrap(), p);
    }

    #[test]
    fn spec_validation() {
        assert!(TruncatedGaussianSpec::new(6.0, 0.0, 4, 8).is_err());
        assert!(TruncatedGaussianSpec::new(6.0, 1.0, 0, 8).is_err());
        assert!(TruncatedGaussianSpec::new(6.0, 1.0, 5, 4).is_err());
        assert!(TruncatedGaussianSpec::new(f64::NAN, 1.0, 4, 8).is_err());
        assert!(ActionPool::new(vec![]).is_err());
        assert!(StageConfig::new(-1, 4).is_err());
        assert!(StageConfig::new(0, 0).is_err());
    }

    #[test]
    fn plan_warnings() {
        let p = pool(&[(6.0, 2.0, 4, 8)]);
        let cfg = StageConfig::new(2, 4).unwrap();
        let w = validate_plan(&HarnessPlan::new(vec![100]).unwrap(), &cfg, &p);
        assert_eq!(w.len(), 1);
        assert!(w[0].to_string().contains("unreachable: 100 > 4·8+2"), "{}", w[0]);

        let w = validate_plan(&decompose_uniform(100, 4).unwrap(), &cfg, &p);
        assert!(w.is_empty());

        let p = pool(&[(6.0, 1.0, 5, 8)]);
        let cfg = StageConfig::new(0, 4).unwrap();
        let w = validate_plan(&HarnessPlan::new(vec![3]).unwrap(), &cfg, &p);
        assert_eq!(w.len(), 1);
        assert!(w[0].to_string().contains("forced overshoot: 3 < 5−0"), "{}", w[0]);
    }

    #[test]
    fn spec_serde_validates() {
        let ok: TruncatedGaussianSpec =
            serde_json::from_str(r#"{"mu":6.0,"sigma":2.0,"lower":4,"upper":8}"#).unwrap();
        assert_eq!(ok, agents::small());
        assert!(serde_json::from_str::<TruncatedGaussianSpec>(
            r#"{"mu":6.0,"sigma":-2.0,"lower":4,"upper":8}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ActionPool>("[]").is_err());
    }
}
