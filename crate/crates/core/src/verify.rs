//! Acceptance checks. Each check is self-contained, seeded, and reports
//! its own runtime against a budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{agents, decompose_uniform, ActionPool, GuidancePolicy, HarnessPlan, StageConfig, TruncatedGaussianSpec};
use crate::engine::{run_batch, simulate_episodes, Scenario};
use crate::error::{Error, Result};
use crate::oracle::{chain_rule_check, enumerate_pass_probability};
use crate::report::{write_results, RunManifest};
use crate::sampling::{action_pmf, std_normal_quantile, TruncatedGaussian};
use crate::stats::{chi_square_p_value, paired_z, total_variation, wilson_interval};
use crate::streams::stream;
use crate::sweeps::{cells, oracle_for, run_sweep, SweepKind, SweepSpec, GRANULARITY_STAGES};
use crate::theory::{
    check_discrete_convexity, filtered_recoverability, find_m_alpha, find_m_peak, granularity_bound, marginal_delta,
    mismatch_rho, reachable_window_membership, retention_gap, slice_objective, AttemptWindow, FilteringInstance,
    SliceModel, StageBoundInput, StageWindows,
};

const Z_99: f64 = 2.576;
/// One-sided 1% normal quantile.
const Z_ONE_SIDED_99: f64 = 2.326_347_874_040_841;
const SEED: u64 = 0x5eed_0fac_ce55;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    /// The property held and the runtime stayed within budget.
    pub passed: bool,
    pub property_held: bool,
    pub elapsed_ms: u128,
    pub budget_ms: u128,
    pub detail: String,
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {} ({} ms / {} ms): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed_ms,
            self.budget_ms,
            self.detail
        )
    }
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget: Duration,
    run: fn(&Path) -> Result<(bool, String)>,
}

pub const CRITERIA: [Criterion; 12] = [
    Criterion { id: 1, name: "sigmoid identity", budget: Duration::from_secs(1), run: sigmoid_identity },
    Criterion { id: 2, name: "chain-rule factorization", budget: Duration::from_secs(30), run: chain_rule },
    Criterion { id: 3, name: "oracle/Monte Carlo agreement", budget: Duration::from_secs(120), run: oracle_agreement },
    Criterion { id: 4, name: "degenerate-cell exactness", budget: Duration::from_secs(1), run: degenerate_cells },
    Criterion { id: 5, name: "granularity bound validity", budget: Duration::from_secs(60), run: bound_validity },
    Criterion { id: 6, name: "reachability/mismatch consistency", budget: Duration::from_secs(1), run: reachability_consistency },
    Criterion { id: 7, name: "guidance ordering", budget: Duration::from_secs(180), run: guidance_ordering },
    Criterion { id: 8, name: "slice machinery", budget: Duration::from_secs(5), run: slice_machinery },
    Criterion { id: 9, name: "partial-harness prediction", budget: Duration::from_secs(180), run: partial_harness },
    Criterion { id: 10, name: "control monotonicity", budget: Duration::from_secs(60), run: control_monotonicity },
    Criterion { id: 11, name: "sampler fidelity", budget: Duration::from_secs(10), run: sampler_fidelity },
    Criterion { id: 12, name: "determinism across thread counts", budget: Duration::from_secs(120), run: determinism },
];

impl Criterion {
    pub fn evaluate(&self, scratch: &Path) -> CriterionReport {
        let start = Instant::now();
        let outcome = (self.run)(scratch);
        let elapsed = start.elapsed();
        let (held, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        CriterionReport {
            id: self.id,
            name: self.name,
            passed: held && elapsed <= self.budget,
            property_held: held,
            elapsed_ms: elapsed.as_millis(),
            budget_ms: self.budget.as_millis(),
            detail,
        }
    }
}

/// Runs every criterion in order; `scratch` receives intermediate files.
pub fn run_all(scratch: &Path) -> Vec<CriterionReport> {
    CRITERIA.iter().map(|c| c.evaluate(scratch)).collect()
}

fn standard_agents() -> [TruncatedGaussianSpec; 3] {
    [agents::small(), agents::medium(), agents::large()]
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ tag)
}

fn random_instance(rng: &mut ChaCha8Rng) -> FilteringInstance {
    loop {
        let n = rng.random_range(2..=16);
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let base: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let weights: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { 5.0 * rng.random::<f64>() })
            .collect();
        let rec: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        if let Ok(inst) = FilteringInstance::new(base, weights, rec) {
            if inst.weights().iter().any(|w| *w > 0.0) {
                return inst;
            }
        }
    }
}

fn sigmoid_identity(_: &Path) -> Result<(bool, String)> {
    let mut rng = rng(1);
    let (mut max_err, mut sign_failures, mut infinite) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let f = filtered_recoverability(&inst)?;
        let g = retention_gap(&inst)?;
        max_err = max_err.max((f.exact - f.via_identity).abs());
        infinite += g.gap.is_infinite() as u32;
        let base = inst.base_recoverable_mass();
        let ok = if g.gap > 0.0 {
            f.exact > base
        } else if g.gap < 0.0 {
            f.exact < base
        } else {
            (f.exact - base).abs() <= 1e-12
        };
        sign_failures += !ok as u32;
    }
    Ok((
        max_err <= 1e-10 && sign_failures == 0,
        format!("1000 instances ({infinite} with infinite gap), max |exact - identity| = {max_err:.3e}, sign-law failures = {sign_failures}"),
    ))
}

fn random_spec(rng: &mut ChaCha8Rng) -> TruncatedGaussianSpec {
    let mu: f64 = rng.random_range(1.5..12.0);
    let sigma = rng.random_range(0.5..4.0);
    let lower = ((mu - rng.random_range(0.0..3.0f64)).floor() as i64).max(1);
    let upper = lower + rng.random_range(0..=8);
    TruncatedGaussianSpec::new(mu, sigma, lower, upper).expect("valid random spec")
}

fn chain_rule(_: &Path) -> Result<(bool, String)> {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let pool = ActionPool::new((0..rng.random_range(1..=4)).map(|_| random_spec(&mut rng)).collect())?;
        let plan = HarnessPlan::new((0..rng.random_range(1..=6)).map(|_| rng.random_range(1..=40)).collect())?;
        let config = StageConfig::new(rng.random_range(0..=4), rng.random_range(1..=6))?;
        let policy = GuidancePolicy::ALL[rng.random_range(0..3)];
        match chain_rule_check(&plan, &config, &pool, policy) {
            Ok(r) => {
                worst = worst.max(r);
                done += 1;
            }
            Err(Error::DegenerateNormalizer { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok((worst <= 1e-12, format!("100 random instances, max residual = {worst:.3e}")))
}

fn oracle_agreement(_: &Path) -> Result<(bool, String)> {
    let spec = SweepSpec::defaults(SweepKind::Granularity);
    let out = run_sweep(&spec)?;
    let mut violations = Vec::new();
    let mut missing = 0;
    for row in &out.rows {
        match row.oracle_prob {
            None => missing += 1,
            Some(p) => {
                let (lo, hi) = wilson_interval(row.batch.successes, row.batch.episodes, Z_99)?;
                if p < lo || p > hi {
                    violations.push(format!("{}: oracle {p:.5} vs [{lo:.5}, {hi:.5}]", row.coords.join("/")));
                }
            }
        }
    }
    let ok = out.rows.len() == 42 && out.errors.is_empty() && missing == 0 && violations.len() <= 2;
    Ok((
        ok,
        format!(
            "{} cells x {} episodes, {} outside 99% Wilson band{}{}",
            out.rows.len(),
            spec.episodes,
            violations.len(),
            if violations.is_empty() { "" } else { ": " },
            violations.join("; ")
        ),
    ))
}

fn degenerate_cells(_: &Path) -> Result<(bool, String)> {
    let mut detail = String::new();
    let mut ok = true;
    let cases: [(&str, TruncatedGaussianSpec, HarnessPlan, StageConfig, f64); 4] = [
        ("small K=1", agents::small(), decompose_uniform(100, 1)?, StageConfig::new(2, 4)?, 0.0),
        ("small 10x6 eps=2 R=1", agents::small(), decompose_uniform(60, 10)?, StageConfig::new(2, 1)?, 1.0),
        ("medium 5x8 eps=3 R=1", agents::medium(), decompose_uniform(40, 5)?, StageConfig::new(3, 1)?, 1.0),
        ("large 4x10 eps=4 R=2", agents::large(), decompose_uniform(40, 4)?, StageConfig::new(4, 2)?, 1.0),
    ];
    for (label, spec, plan, config, expected) in cases {
        let pool = ActionPool::single(spec);
        let exact = enumerate_pass_probability(&plan, &config, &pool, GuidancePolicy::Aligned)?.episode_prob;
        let sim = run_batch(&Scenario::new(plan, config, pool, GuidancePolicy::Aligned), 5_000, SEED)?.pass_rate;
        ok &= exact == expected && sim == expected;
        let _ = write!(detail, "{label}: oracle {exact}, simulator {sim}; ");
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

fn bound_validity(_: &Path) -> Result<(bool, String)> {
    const MU: f64 = 6.0;
    const SIGMA: f64 = 2.0;
    const ATTEMPTS: u32 = 4;
    const EPS: f64 = 2.0;
    const TRIALS: u64 = 100_000;
    let windows = StageWindows::new(
        (1..=ATTEMPTS)
            .map(|m| AttemptWindow {
                low: m as f64 * MU,
                high: m as f64 * MU,
                sigma: (m as f64).sqrt() * SIGMA,
            })
            .collect(),
    )?;
    let mut violations = Vec::new();
    let mut informative = 0;
    let mut worst_margin = f64::INFINITY;
    for i in 0..20u64 {
        let ell = 60.0 * i as f64 / 19.0;
        let bound = granularity_bound(&[StageBoundInput {
            required_progress: ell,
            tolerance: EPS,
            boundary_loss: 0.0,
            windows: windows.clone(),
        }])?;
        informative += (bound < 0.5) as u32;
        let mut rng = stream(SEED, 5, i);
        let mut hits = 0u64;
        for _ in 0..TRIALS {
            let mut z = 0.0;
            let mut hit = false;
            for _ in 0..ATTEMPTS {
                let u: f64 = rng.random();
                z += MU + SIGMA * std_normal_quantile(u);
                hit |= (z - ell).abs() <= EPS;
            }
            hits += hit as u64;
        }
        let freq = hits as f64 / TRIALS as f64;
        let se = (bound.min(1.0) * (1.0 - bound.min(1.0)) / TRIALS as f64).sqrt();
        worst_margin = worst_margin.min(bound + 3.0 * se - freq);
        if freq > bound + 3.0 * se {
            violations.push(format!("l={ell:.2}: {freq:.5} > {bound:.5}"));
        }
    }
    Ok((
        violations.is_empty() && informative >= 5,
        format!(
            "20 grid points x {TRIALS} trials, {informative} with bound < 0.5, min slack {worst_margin:.4}, violations: {}",
            if violations.is_empty() { "none".to_string() } else { violations.join("; ") }
        ),
    ))
}

fn reachability_consistency(_: &Path) -> Result<(bool, String)> {
    let (total, tol, budget) = (100.0, 2.0, 4u32);
    let mut mismatches = Vec::new();
    let mut reachable = 0;
    for spec in standard_agents() {
        for k in GRANULARITY_STAGES {
            let member = reachable_window_membership(
                total,
                k as u32,
                spec.lower() as f64,
                spec.upper() as f64,
                tol,
                budget,
            )?;
            let rho = mismatch_rho(&StageBoundInput {
                required_progress: total / k as f64,
                tolerance: tol,
                boundary_loss: 0.0,
                windows: StageWindows::from_spec(&spec, budget)?,
            });
            reachable += member as u32;
            if member != (rho == 0.0) {
                mismatches.push(format!("{spec} K={k}: member={member}, rho={rho}"));
            }
        }
    }
    Ok((
        mismatches.is_empty(),
        format!(
            "42 agent/K pairs, {reachable} reachable, {} disagreements{}",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(": {}", mismatches.join("; ")) }
        ),
    ))
}

fn guidance_ordering(_: &Path) -> Result<(bool, String)> {
    let spec = SweepSpec::defaults(SweepKind::GuidancePool);
    let mut outcomes: BTreeMap<(usize, GuidancePolicy), Vec<bool>> = BTreeMap::new();
    let mut exact: BTreeMap<(usize, GuidancePolicy), f64> = BTreeMap::new();
    for cell in cells(&spec) {
        let scenario = cell.scenario(spec.kind, spec.total)?;
        let eps = simulate_episodes(&scenario, spec.episodes, spec.master_seed)?;
        outcomes.insert((cell.pool_size, cell.policy), eps.iter().map(|e| e.success).collect());
        if let Some(o) = oracle_for(&scenario)? {
            exact.insert((cell.pool_size, cell.policy), o.episode_prob);
        }
    }
    let (a, u, m) = (GuidancePolicy::Aligned, GuidancePolicy::UniformRandom, GuidancePolicy::Misaligned);
    let mut comparisons = 0;
    let mut violations = Vec::new();
    let mut exact_failures = Vec::new();
    let mut worst_z = f64::INFINITY;
    for &n in spec.pool_sizes.iter().filter(|n| **n >= 2) {
        for (hi, lo) in [(a, u), (u, m)] {
            comparisons += 1;
            let z = paired_z(&outcomes[&(n, hi)], &outcomes[&(n, lo)]);
            worst_z = worst_z.min(z);
            if z < -Z_ONE_SIDED_99 {
                violations.push(format!("N={n} {hi} vs {lo}: z={z:.2}"));
            }
            match (exact.get(&(n, hi)), exact.get(&(n, lo))) {
                (Some(x), Some(y)) if x < y => exact_failures.push(format!("N={n} {hi} {x} < {lo} {y}")),
                (None, _) | (_, None) => exact_failures.push(format!("N={n}: oracle unavailable")),
                _ => {}
            }
        }
    }
    let budget = (0.01 * comparisons as f64).ceil() as usize;
    Ok((
        violations.len() <= budget && exact_failures.is_empty(),
        format!(
            "{comparisons} paired comparisons at {} episodes, min z = {worst_z:.2}, significant reversals {} (budget {budget}), exact-order failures {}{}",
            spec.episodes,
            violations.len(),
            exact_failures.len(),
            [violations, exact_failures]
                .concat()
                .iter()
                .map(|s| format!("; {s}"))
                .collect::<String>()
        ),
    ))
}

fn random_convex_model(rng: &mut ChaCha8Rng) -> Result<SliceModel> {
    let chunk = rng.random_range(1..=30i64);
    let total = rng.random_range(chunk..=200);
    let max = total / chunk;
    let mut deltas: Vec<f64> = (0..max).map(|_| 5.0 * rng.random::<f64>()).collect();
    deltas.sort_by(|x, y| y.total_cmp(x));
    let tail_end = if total % chunk == 0 { 0.0 } else { 2.0 * rng.random::<f64>() };
    let mut kappa = BTreeMap::new();
    let mut acc = tail_end;
    kappa.insert(total - max * chunk, tail_end);
    for m in (0..max).rev() {
        acc += deltas[m as usize];
        kappa.insert(total - m * chunk, acc);
    }
    SliceModel::new(chunk, total, 3.0 * rng.random::<f64>(), kappa)
}

fn slice_machinery(_: &Path) -> Result<(bool, String)> {
    let mut rng = rng(8);
    let (mut nonconvex, mut identity_err, mut peak_fail, mut alpha_fail) = (0, 0.0f64, 0, 0);
    for _ in 0..10_000 {
        let model = random_convex_model(&mut rng)?;
        let f = model.objective_values();
        nonconvex += !check_discrete_convexity(&f) as u32;
        for m in 0..model.max_coverage() {
            let lhs = f[m as usize + 1] - f[m as usize];
            let rhs = model.scaffold_cost - marginal_delta(&model, m)?;
            identity_err = identity_err.max((lhs - rhs).abs());
        }
        let min = f.iter().copied().fold(f64::INFINITY, f64::min);
        let argmin = f.iter().position(|v| *v == min).expect("non-empty") as i64;
        peak_fail += (find_m_peak(&model) != argmin) as u32;
        let alpha = rng.random_range(0.01..0.99);
        let scan = f.iter().position(|v| *v <= -f64::ln(alpha)).map(|m| m as i64);
        alpha_fail += (find_m_alpha(&model, alpha)? != scan) as u32;
    }
    let kappa = (0..=5).map(|m| (100 - 20 * m, 0.0005 * ((100 - 20 * m) as f64).powi(2))).collect();
    let worked = SliceModel::new(20, 100, 0.7, kappa)?;
    let (peak, m_alpha) = (find_m_peak(&worked), find_m_alpha(&worked, 0.05)?);
    let f3 = slice_objective(&worked, 3)?;
    let ok = nonconvex == 0 && identity_err <= 1e-12 && peak_fail == 0 && alpha_fail == 0 && peak == 3 && m_alpha == Some(3);
    Ok((
        ok,
        format!(
            "10000 models: non-convex {nonconvex}, max identity error {identity_err:.2e}, m_peak mismatches {peak_fail}, m_alpha mismatches {alpha_fail}; worked model m_peak={peak}, m_alpha(0.05)={m_alpha:?}, F(3)={f3:.4}"
        ),
    ))
}

fn partial_harness(_: &Path) -> Result<(bool, String)> {
    let spec = SweepSpec::defaults(SweepKind::PartialHarness);
    let out = run_sweep(&spec)?;
    if !out.errors.is_empty() {
        return Ok((false, format!("cell errors: {:?}", out.errors)));
    }
    let mut ok = true;
    let mut detail = String::new();
    let mut peaks = BTreeMap::new();
    for agent in &spec.agents {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.coords[0] == agent.name).collect();
        let best = rows.iter().map(|r| r.batch.pass_rate).fold(f64::NEG_INFINITY, f64::max);
        let empirical: i64 = rows
            .iter()
            .find(|r| r.batch.pass_rate == best)
            .map(|r| r.coords[2].parse().expect("integer r"))
            .expect("rows present");
        let slice = out.slices.iter().find(|s| s.agent == agent.name).expect("slice per agent");
        ok &= (empirical - slice.m_peak).abs() <= 1;
        peaks.insert(agent.name.clone(), empirical);
        let _ = write!(
            detail,
            "{}: empirical argmax r={empirical} (rate {best:.4}), m_peak={}{}; ",
            agent.name,
            slice.m_peak,
            if slice.exact { " [exact model]" } else { "" }
        );
    }
    let ordered = peaks["large"] <= peaks["small"];
    ok &= ordered;
    let _ = write!(detail, "large peak <= small peak: {ordered}");
    Ok((ok, detail))
}

fn control_monotonicity(_: &Path) -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = String::new();
    for spec in standard_agents() {
        let pool = ActionPool::single(spec);
        let plan = decompose_uniform(100, 4)?;
        let retry: Vec<f64> = (1..=10)
            .map(|r| Ok(enumerate_pass_probability(&plan, &StageConfig::new(2, r)?, &pool, GuidancePolicy::Aligned)?.episode_prob))
            .collect::<Result<_>>()?;
        let plan = decompose_uniform(100, 10)?;
        let tol: Vec<_> = (0..=10)
            .map(|e| enumerate_pass_probability(&plan, &StageConfig::new(e, 4)?, &pool, GuidancePolicy::Aligned))
            .collect::<Result<_>>()?;
        let tol_p: Vec<f64> = tol.iter().map(|t| t.episode_prob).collect();
        let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
        let (r_ok, e_ok) = (monotone(&retry), monotone(&tol_p));
        ok &= r_ok && e_ok;
        let bias: Vec<String> = tol
            .iter()
            .map(|t| t.mean_bias().map(|b| format!("{b:.2}")).unwrap_or_else(|| "-".into()))
            .collect();
        let _ = write!(
            detail,
            "{spec}: R-monotone {r_ok} (P: {:.3} -> {:.3}), eps-monotone {e_ok} (P: {:.3} -> {:.3}), mean bias by eps [{}]; ",
            retry[0],
            retry[9],
            tol_p[0],
            tol_p[10],
            bias.join(" ")
        );
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

fn sampler_fidelity(_: &Path) -> Result<(bool, String)> {
    const DRAWS: u64 = 1_000_000;
    let mut ok = true;
    let mut detail = String::new();
    for (i, spec) in standard_agents().iter().enumerate() {
        let sampler = TruncatedGaussian::new(*spec)?;
        let pmf = action_pmf(spec)?;
        let mut counts = vec![0u64; pmf.masses().len()];
        let mut rng = stream(SEED, 11, i as u64);
        for _ in 0..DRAWS {
            counts[(sampler.sample(&mut rng) - pmf.lower()) as usize] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / DRAWS as f64).collect();
        let tv = total_variation(&freq, pmf.masses());
        let p = chi_square_p_value(&counts, pmf.masses())?;
        ok &= tv <= 0.002 && p >= 0.001;
        let _ = write!(detail, "{spec}: TV {tv:.5}, chi-square p {p:.4}; ");
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

fn sweep_bytes(specs: &[SweepSpec], threads: usize, dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let outputs = pool.install(|| specs.iter().map(run_sweep).collect::<Result<Vec<_>>>())?;
    let mut manifest = RunManifest::new("verify", String::new());
    let mut files = BTreeMap::new();
    for path in write_results(&outputs, dir, &mut manifest)? {
        if path.extension().is_some_and(|e| e == "csv") {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path)?);
        }
    }
    Ok(files)
}

fn determinism(scratch: &Path) -> Result<(bool, String)> {
    let specs = [SweepSpec::defaults(SweepKind::Granularity), SweepSpec::defaults(SweepKind::GuidancePool)];
    let one = sweep_bytes(&specs, 1, &scratch.join("determinism_t1"))?;
    let eight = sweep_bytes(&specs, 8, &scratch.join("determinism_t8"))?;
    let differing: Vec<&String> = one.keys().filter(|k| one.get(*k) != eight.get(*k)).collect();
    let bytes: usize = one.values().map(Vec::len).sum();
    Ok((
        differing.is_empty() && one.len() == eight.len() && !one.is_empty(),
        format!(
            "{} CSV files ({bytes} bytes) from 1 and 8 threads; differing files: {}",
            one.len(),
            if differing.is_empty() {
                "none".to_string()
            } else {
                differing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            }
        ),
    ))
}
