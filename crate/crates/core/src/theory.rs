//! Closed-form harness diagnostics.
//!
//! * Granularity: the per-stage mismatch between requested progress and the
//!   cumulative progress windows reachable within the attempt budget, and the
//!   resulting upper bound on episode success.
//! * Guidance: retention gaps on a finite outcome space and the sigmoid
//!   log-odds identity for filtered recoverability.
//! * Partial scaffolding: the slice objective `F(m) = m·c_s + κ(L − m·s)`,
//!   its marginal differences, and the coverage selection rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::TruncatedGaussianSpec;
use crate::error::{Error, Result};
use crate::sampling::truncated_moments;

const CONVEXITY_SLACK: f64 = 1e-12;

/// Cumulative controllable progress after `m` attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptWindow {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

/// Windows for attempts `1..=M`, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttemptWindow>", into = "Vec<AttemptWindow>")]
pub struct StageWindows {
    attempts: Vec<AttemptWindow>,
}

impl TryFrom<Vec<AttemptWindow>> for StageWindows {
    type Error = Error;

    fn try_from(attempts: Vec<AttemptWindow>) -> Result<Self> {
        Self::new(attempts)
    }
}

impl From<StageWindows> for Vec<AttemptWindow> {
    fn from(w: StageWindows) -> Self {
        w.attempts
    }
}

impl StageWindows {
    pub fn new(attempts: Vec<AttemptWindow>) -> Result<Self> {
        if attempts.is_empty() {
            return Err(Error::InvalidArgument("at least one attempt window is required".into()));
        }
        for (i, w) in attempts.iter().enumerate() {
            if !(w.low <= w.high) {
                return Err(Error::InvalidArgument(format!(
                    "window {} has low {} > high {}",
                    i + 1,
                    w.low,
                    w.high
                )));
            }
            if !(w.sigma > 0.0 && w.sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "window {} has non-positive sigma {}",
                    i + 1,
                    w.sigma
                )));
            }
        }
        Ok(Self { attempts })
    }

    /// `m·[step_low, step_high]` with `σ_m = √m · step_sigma`.
    pub fn from_steps(step_low: f64, step_high: f64, step_sigma: f64, budget: u32) -> Result<Self> {
        Self::new(
            (1..=budget)
                .map(|m| {
                    let m = m as f64;
                    AttemptWindow {
                        low: m * step_low,
                        high: m * step_high,
                        sigma: m.sqrt() * step_sigma,
                    }
                })
                .collect(),
        )
    }

    /// Windows spanned by the support extremes of one action distribution,
    /// with per-step spread taken from the pre-rounding truncated variance.
    pub fn from_spec(spec: &TruncatedGaussianSpec, budget: u32) -> Result<Self> {
        let (_, variance) = truncated_moments(spec)?;
        Self::from_steps(spec.lower() as f64, spec.upper() as f64, variance.sqrt(), budget)
    }

    pub fn attempts(&self) -> &[AttemptWindow] {
        &self.attempts
    }

    pub fn budget(&self) -> usize {
        self.attempts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBoundInput {
    pub required_progress: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub boundary_loss: f64,
    pub windows: StageWindows,
}

fn interval_distance(x: f64, low: f64, high: f64) -> f64 {
    if x < low {
        low - x
    } else if x > high {
        x - high
    } else {
        0.0
    }
}

/// Smallest standardized squared gap between the requested progress and any
/// window reachable within the budget.
pub fn mismatch_rho(input: &StageBoundInput) -> f64 {
    input
        .windows
        .attempts()
        .iter()
        .map(|w| {
            let gap = (interval_distance(input.required_progress, w.low, w.high) - input.tolerance).max(0.0);
            gap * gap / (2.0 * w.sigma * w.sigma)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `exp(−Σ_t [η_t + (ρ_t − ln M_t)₊])`.
pub fn granularity_bound(stages: &[StageBoundInput]) -> Result<f64> {
    if stages.is_empty() {
        return Err(Error::InvalidArgument("granularity bound needs at least one stage".into()));
    }
    let exponent: f64 = stages
        .iter()
        .map(|s| {
            let m = s.windows.budget() as f64;
            s.boundary_loss + (mismatch_rho(s) - m.ln()).max(0.0)
        })
        .sum();
    Ok((-exponent).exp())
}

/// Whether the uniform subgoal `total / stages` falls in
/// `∪_{m ≤ budget} [m·step_low − tol, m·step_high + tol]`.
pub fn reachable_window_membership(
    total: f64,
    stages: u32,
    step_low: f64,
    step_high: f64,
    tolerance: f64,
    budget: u32,
) -> Result<bool> {
    if stages < 1 || budget < 1 {
        return Err(Error::InvalidArgument("stages and budget must be >= 1".into()));
    }
    if step_low > step_high {
        return Err(Error::InvalidArgument(format!("step_low {step_low} > step_high {step_high}")));
    }
    let target = total / stages as f64;
    Ok((1..=budget).any(|m| {
        let m = m as f64;
        target >= m * step_low - tolerance && target <= m * step_high + tolerance
    }))
}

/// Finite outcome space with a base law, guidance weights, and the
/// recoverable subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringInstance {
    base_probs: Vec<f64>,
    weights: Vec<f64>,
    recoverable: Vec<bool>,
}

impl FilteringInstance {
    pub fn new(base_probs: Vec<f64>, weights: Vec<f64>, recoverable: Vec<bool>) -> Result<Self> {
        let n = base_probs.len();
        if n == 0 || weights.len() != n || recoverable.len() != n {
            return Err(Error::InvalidInstance(format!(
                "lengths differ or are zero: {} base, {} weights, {} mask",
                n,
                weights.len(),
                recoverable.len()
            )));
        }
        if base_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInstance("base probabilities must be finite and >= 0".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInstance("weights must be finite and >= 0".into()));
        }
        let total: f64 = base_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInstance(format!("base probabilities sum to {total}")));
        }
        let inst = Self {
            base_probs,
            weights,
            recoverable,
        };
        let (q, q_bad) = inst.split(|p, _| p);
        if !(q > 0.0 && q_bad > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "base recoverable mass {q} is degenerate"
            )));
        }
        Ok(inst)
    }

    pub fn base_probs(&self) -> &[f64] {
        &self.base_probs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn recoverable(&self) -> &[bool] {
        &self.recoverable
    }

    pub fn len(&self) -> usize {
        self.base_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_probs.is_empty()
    }

    /// `Q₀(R)`: base probability of the recoverable set.
    pub fn base_recoverable_mass(&self) -> f64 {
        self.split(|p, _| p).0
    }

    /// Sums of `f(base, weight)` over the recoverable set and its complement.
    fn split(&self, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
        let mut rec = 0.0;
        let mut bad = 0.0;
        for ((&p, &w), &r) in self.base_probs.iter().zip(&self.weights).zip(&self.recoverable) {
            if r {
                rec += f(p, w);
            } else {
                bad += f(p, w);
            }
        }
        (rec, bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetentionGap {
    /// `log E[W | R] − log E[W | Rᶜ]`; signed infinity when one side carries no weight.
    pub gap: f64,
    /// `log(Q₀(R) / Q₀(Rᶜ))`.
    pub base_log_odds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilteredRecoverability {
    /// Direct reweighted mass of the recoverable set.
    pub exact: f64,
    /// `σ(ω⁰ + Γ)`.
    pub via_identity: f64,
}

pub fn sigmoid(u: f64) -> f64 {
    if u == f64::INFINITY {
        1.0
    } else if u == f64::NEG_INFINITY {
        0.0
    } else if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn retention_gap(instance: &FilteringInstance) -> Result<RetentionGap> {
    let (q_rec, q_bad) = instance.split(|p, _| p);
    let (w_rec, w_bad) = instance.split(|p, w| p * w);
    let mean_rec = w_rec / q_rec;
    let mean_bad = w_bad / q_bad;
    let gap = match (mean_rec > 0.0, mean_bad > 0.0) {
        (true, true) => mean_rec.ln() - mean_bad.ln(),
        (true, false) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => {
            return Err(Error::InvalidInstance("all weighted mass is zero".into()));
        }
    };
    Ok(RetentionGap {
        gap,
        base_log_odds: (q_rec / q_bad).ln(),
    })
}

pub fn filtered_recoverability(instance: &FilteringInstance) -> Result<FilteredRecoverability> {
    let (w_rec, w_bad) = instance.split(|p, w| p * w);
    let normalizer = w_rec + w_bad;
    if !(normalizer > 0.0) {
        return Err(Error::InvalidInstance("zero normalizer: all weights vanish".into()));
    }
    let gap = retention_gap(instance)?;
    Ok(FilteredRecoverability {
        exact: w_rec / normalizer,
        via_identity: sigmoid(gap.base_log_odds + gap.gap),
    })
}

/// Homogeneous partial-scaffolding model: the cost of one scaffolded stage of
/// size `chunk` and the tail risk of each residual on the slice grid.
///
/// Risks are negative log-probabilities; `f64::INFINITY` marks an impossible
/// residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceModel {
    pub chunk: i64,
    pub total: i64,
    pub scaffold_cost: f64,
    pub kappa_table: BTreeMap<i64, f64>,
    pub smoothed_flags: BTreeMap<i64, bool>,
}

impl SliceModel {
    /// Builds a model; `kappa` must cover every grid residual `total − m·chunk`.
    /// `κ(0) = 0` is inserted if absent.
    pub fn new(chunk: i64, total: i64, scaffold_cost: f64, mut kappa: BTreeMap<i64, f64>) -> Result<Self> {
        if chunk < 1 || total < 1 {
            return Err(Error::InvalidArgument(format!(
                "chunk ({chunk}) and total ({total}) must be >= 1"
            )));
        }
        if !(scaffold_cost >= 0.0) {
            return Err(Error::InvalidArgument(format!("scaffold cost {scaffold_cost} must be >= 0")));
        }
        match kappa.get(&0) {
            Some(&k) if k != 0.0 => {
                return Err(Error::InvalidArgument(format!("kappa(0) must be 0, got {k}")));
            }
            _ => {
                kappa.insert(0, 0.0);
            }
        }
        for m in 0..=total / chunk {
            let d = total - m * chunk;
            match kappa.get(&d) {
                None => return Err(Error::InvalidArgument(format!("kappa missing residual {d}"))),
                Some(k) if !(*k >= 0.0) => {
                    return Err(Error::InvalidArgument(format!("kappa({d}) = {k} must be >= 0")));
                }
                _ => {}
            }
        }
        let smoothed_flags = kappa.keys().map(|&d| (d, false)).collect();
        Ok(Self {
            chunk,
            total,
            scaffold_cost,
            kappa_table: kappa,
            smoothed_flags,
        })
    }

    /// Largest grid coverage `⌊L/s⌋`.
    pub fn max_coverage(&self) -> i64 {
        self.total / self.chunk
    }

    pub fn residual(&self, coverage: i64) -> i64 {
        self.total - coverage * self.chunk
    }

    fn check_grid(&self, coverage: i64) -> Result<()> {
        if coverage < 0 || coverage > self.max_coverage() {
            return Err(Error::OffGrid {
                coverage,
                max: self.max_coverage(),
            });
        }
        Ok(())
    }

    pub fn kappa(&self, coverage: i64) -> Result<f64> {
        self.check_grid(coverage)?;
        Ok(self.kappa_table[&self.residual(coverage)])
    }

    /// `F(m)` for every grid coverage.
    pub fn objective_values(&self) -> Vec<f64> {
        (0..=self.max_coverage())
            .map(|m| slice_objective(self, m).expect("on grid"))
            .collect()
    }
}

/// `F(m) = m·c_s + κ(L − m·s)`.
pub fn slice_objective(model: &SliceModel, coverage: i64) -> Result<f64> {
    let kappa = model.kappa(coverage)?;
    Ok(coverage as f64 * model.scaffold_cost + kappa)
}

/// `Δ(m) = κ(L − m·s) − κ(L − (m+1)·s)`: tail risk removed by one more stage.
///
/// An impossible current tail (`κ = ∞`) counts as an unbounded reduction, so
/// scaffolding keeps extending until the tail becomes attainable.
pub fn marginal_delta(model: &SliceModel, coverage: i64) -> Result<f64> {
    let now = model.kappa(coverage)?;
    let next = model.kappa(coverage + 1)?;
    Ok(if now.is_infinite() { f64::INFINITY } else { now - next })
}

/// Smallest `m` with `m + 1` on the grid and `Δ(m) ≤ c_s`; the largest grid
/// coverage when no margin is unprofitable.
pub fn find_m_peak(model: &SliceModel) -> i64 {
    let max = model.max_coverage();
    (0..max)
        .find(|&m| marginal_delta(model, m).expect("on grid") <= model.scaffold_cost)
        .unwrap_or(max)
}

/// Smallest coverage with `F(m) ≤ −ln α`.
pub fn find_m_alpha(model: &SliceModel, alpha: f64) -> Result<Option<i64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let threshold = -alpha.ln();
    Ok((0..=model.max_coverage()).find(|&m| slice_objective(model, m).expect("on grid") <= threshold))
}

/// True iff forward differences are non-decreasing (within `1e-12`).
///
/// `+∞` entries are accepted only as a contiguous run at either end of the
/// sequence (an extended-real convex function is finite on an interval).
pub fn check_discrete_convexity(values: &[f64]) -> bool {
    if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return false;
    }
    let first = values.iter().position(|v| v.is_finite());
    let last = values.iter().rposition(|v| v.is_finite());
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => return true,
    };
    let finite = &values[first..=last];
    if finite.iter().any(|v| !v.is_finite()) {
        return false;
    }
    finite
        .windows(3)
        .all(|w| (w[2] - w[1]) - (w[1] - w[0]) >= -CONVEXITY_SLACK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_model(cost: f64) -> SliceModel {
        let kappa = (0..=5).map(|m| (20 * m, 0.0005 * (20.0 * m as f64).powi(2))).collect();
        SliceModel::new(20, 100, cost, kappa).unwrap()
    }

    fn small_windows(budget: u32) -> StageWindows {
        StageWindows::new(
            (1..=budget)
                .map(|m| AttemptWindow {
                    low: 4.0 * m as f64,
                    high: 8.0 * m as f64,
                    sigma: 2.0 * (m as f64).sqrt(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn input(ell: f64) -> StageBoundInput {
        StageBoundInput {
            required_progress: ell,
            tolerance: 2.0,
            boundary_loss: 0.0,
            windows: small_windows(4),
        }
    }

    #[test]
    fn rho_examples() {
        assert_eq!(mismatch_rho(&input(25.0)), 0.0);
        // Brute force over m = 1..4 of ((ℓ − 8m − 2)₊)² / (8m).
        let brute = (1..=4)
            .map(|m| {
                let g = (40.0 - 8.0 * m as f64 - 2.0).max(0.0);
                g * g / (8.0 * m as f64)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((mismatch_rho(&input(40.0)) - brute).abs() < 1e-15);
        assert!((mismatch_rho(&input(40.0)) - 1.125).abs() < 1e-15);
        assert_eq!(mismatch_rho(&input(34.0)), 0.0);
        assert!((mismatch_rho(&input(35.0)) - 1.0 / 32.0).abs() < 1e-15);
        assert_eq!(mismatch_rho(&input(2.0)), 0.0);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(granularity_bound(&[input(25.0), input(10.0)]).unwrap(), 1.0);
        assert_eq!(granularity_bound(&[input(40.0)]).unwrap(), 1.0);
        // ρ = 5 at ℓ: (ℓ − 34)² / 32 = 5
        let ell = 34.0 + (160.0f64).sqrt();
        assert!((mismatch_rho(&input(ell)) - 5.0).abs() < 1e-12);
        let b = granularity_bound(&[input(ell)]).unwrap();
        assert!((b - (-(5.0 - 4f64.ln())).exp()).abs() < 1e-15);
        assert!((b - 0.0269).abs() < 1e-4);
        assert!(granularity_bound(&[]).is_err());
    }

    #[test]
    fn boundary_loss_enters_additively() {
        let mut s = input(25.0);
        s.boundary_loss = 0.5;
        assert!((granularity_bound(&[s]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn reachable_examples() {
        assert!(reachable_window_membership(100.0, 4, 4.0, 8.0, 2.0, 4).unwrap());
        assert!(!reachable_window_membership(100.0, 1, 4.0, 8.0, 2.0, 4).unwrap());
        assert!(reachable_window_membership(100.0, 50, 4.0, 8.0, 100.0, 4).unwrap());
        assert!(reachable_window_membership(100.0, 0, 4.0, 8.0, 2.0, 4).is_err());
        assert!(reachable_window_membership(100.0, 1, 9.0, 8.0, 2.0, 4).is_err());
    }

    #[test]
    fn windows_from_spec_use_support_and_truncated_spread() {
        let w = StageWindows::from_spec(&crate::domain::agents::small(), 3).unwrap();
        let (_, var) = truncated_moments(&crate::domain::agents::small()).unwrap();
        assert_eq!(w.budget(), 3);
        let third = w.attempts()[2];
        assert_eq!((third.low, third.high), (12.0, 24.0));
        assert!((third.sigma - (3.0 * var).sqrt()).abs() < 1e-14);
    }

    fn inst(q_rec: f64, w_rec: f64, w_bad: f64) -> FilteringInstance {
        FilteringInstance::new(vec![q_rec, 1.0 - q_rec], vec![w_rec, w_bad], vec![true, false]).unwrap()
    }

    #[test]
    fn retention_gap_examples() {
        let g = retention_gap(&inst(0.6, 2.0, 1.0)).unwrap();
        assert!((g.gap - 2f64.ln()).abs() < 1e-15);
        assert!((g.base_log_odds - 1.5f64.ln()).abs() < 1e-15);
        assert_eq!(retention_gap(&inst(0.6, 3.0, 3.0)).unwrap().gap, 0.0);
        let g = retention_gap(&inst(0.6, 1.0, 4.0)).unwrap();
        assert!((g.gap + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn filtered_examples() {
        let f = filtered_recoverability(&inst(0.6, 2.0, 1.0)).unwrap();
        assert!((f.exact - 0.75).abs() < 1e-15);
        assert!((f.via_identity - sigmoid(3f64.ln())).abs() < 1e-15);
        let f = filtered_recoverability(&inst(0.6, 1.0, 1.0)).unwrap();
        assert!((f.exact - 0.6).abs() < 1e-15);
        let f = filtered_recoverability(&inst(0.6, 1.0, 4.0)).unwrap();
        assert!((f.exact - 0.6 / 2.2).abs() < 1e-15);
        assert!((f.via_identity - sigmoid(0.375f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn extended_real_gaps() {
        let f = filtered_recoverability(&inst(0.3, 1.0, 0.0)).unwrap();
        assert_eq!(retention_gap(&inst(0.3, 1.0, 0.0)).unwrap().gap, f64::INFINITY);
        assert_eq!((f.exact, f.via_identity), (1.0, 1.0));
        let f = filtered_recoverability(&inst(0.3, 0.0, 2.0)).unwrap();
        assert_eq!((f.exact, f.via_identity), (0.0, 0.0));
        assert!(filtered_recoverability(&inst(0.3, 0.0, 0.0)).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(FilteringInstance::new(vec![0.5, 0.5], vec![1.0], vec![true, false]).is_err());
        assert!(FilteringInstance::new(vec![0.5, 0.6], vec![1.0, 1.0], vec![true, false]).is_err());
        assert!(FilteringInstance::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![true, true]).is_err());
        assert!(FilteringInstance::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![true, false]).is_err());
    }

    #[test]
    fn slice_worked_model() {
        let model = worked_model(0.7);
        let f = model.objective_values();
        let expected = [5.0, 3.9, 3.2, 2.9, 3.0, 3.5];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
        assert!((slice_objective(&model, 3).unwrap() - 2.9).abs() < 1e-12);
        assert_eq!(slice_objective(&model, 0).unwrap(), 5.0);
        assert!((marginal_delta(&model, 0).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(find_m_peak(&model), 3);
        assert_eq!(find_m_alpha(&model, 0.05).unwrap(), Some(3));
        assert!(check_discrete_convexity(&f));
        assert!(slice_objective(&model, 6).is_err());
        assert!(slice_objective(&model, -1).is_err());
        assert!(marginal_delta(&model, 5).is_err());
        assert!(find_m_alpha(&model, 1.0).is_err());
        assert!(find_m_alpha(&model, 0.0).is_err());
    }

    #[test]
    fn slice_limits() {
        // Full coverage leaves κ(0) = 0.
        let model = worked_model(0.7);
        assert!((slice_objective(&model, 5).unwrap() - 3.5).abs() < 1e-12);
        // Zero cost with strictly increasing κ: scaffold everything.
        assert_eq!(find_m_peak(&worked_model(0.0)), 5);
        // Cost above the first margin: stop immediately.
        assert_eq!(find_m_peak(&worked_model(2.0)), 0);
        // A loose target is met with no scaffolding.
        assert_eq!(find_m_alpha(&model, 0.001).unwrap(), Some(0));
        // Unreachable target.
        assert_eq!(find_m_alpha(&model, 0.99).unwrap(), None);
        // Constant tail risk away from zero: no reduction.
        let flat = SliceModel::new(20, 100, 0.1, (1..=5).map(|m| (20 * m, 1.0)).collect()).unwrap();
        assert_eq!(marginal_delta(&flat, 1).unwrap(), 0.0);
    }

    #[test]
    fn capability_frontier_zero_cost() {
        let model = worked_model(0.0);
        let alpha = (-1.0f64).exp();
        let m_alpha = find_m_alpha(&model, alpha).unwrap().unwrap();
        let d_alpha = model
            .kappa_table
            .iter()
            .filter(|(_, &k)| k <= 1.0 + 1e-12)
            .map(|(&d, _)| d)
            .max()
            .unwrap();
        assert_eq!(d_alpha, 40);
        let frontier = ((model.total - d_alpha) as f64 / model.chunk as f64).ceil() as i64;
        assert_eq!(m_alpha, 3);
        assert_eq!(frontier, 3);
    }

    #[test]
    fn infinite_tail_keeps_scaffolding() {
        let mut kappa: BTreeMap<i64, f64> = (0..=5).map(|m| (20 * m, 0.0005 * (20.0 * m as f64).powi(2))).collect();
        kappa.insert(100, f64::INFINITY);
        let model = SliceModel::new(20, 100, 0.7, kappa).unwrap();
        assert_eq!(marginal_delta(&model, 0).unwrap(), f64::INFINITY);
        assert_eq!(find_m_peak(&model), 3);
        assert!(check_discrete_convexity(&model.objective_values()));
    }

    #[test]
    fn convexity_checks() {
        assert!(check_discrete_convexity(&[5.0, 3.9, 3.2, 2.9, 3.0, 3.5]));
        assert!(!check_discrete_convexity(&[1.0, 3.0, 2.0]));
        assert!(check_discrete_convexity(&[2.0; 6]));
        assert!(check_discrete_convexity(&[f64::INFINITY, f64::INFINITY, 1.0, 0.5, 0.6]));
        assert!(!check_discrete_convexity(&[1.0, f64::INFINITY, 1.0]));
        assert!(!check_discrete_convexity(&[1.0, f64::NAN, 1.0]));
    }

    #[test]
    fn model_validation() {
        assert!(SliceModel::new(20, 100, 0.5, BTreeMap::new()).is_err());
        let mut k: BTreeMap<i64, f64> = (0..=5).map(|m| (20 * m, 1.0)).collect();
        assert!(SliceModel::new(20, 100, 0.5, k.clone()).is_err());
        k.insert(0, 0.0);
        assert!(SliceModel::new(20, 100, -0.5, k.clone()).is_err());
        k.insert(40, -1.0);
        assert!(SliceModel::new(20, 100, 0.5, k).is_err());
    }
}
