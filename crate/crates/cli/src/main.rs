use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use harness_lab::config::{config_digest, load_config};
use harness_lab::report::{format_float, write_oracle_results, write_results, write_slice_json, RunManifest};
use harness_lab::sweeps::{estimate_slice_model, run_oracle_sweep, run_sweep, NamedPool, SweepSpec, DEFAULT_SEED};
use harness_lab::theory::{
    check_discrete_convexity, filtered_recoverability, find_m_alpha, find_m_peak, granularity_bound, marginal_delta,
    mismatch_rho, reachable_window_membership, retention_gap, FilteringInstance, SliceModel, StageBoundInput,
};
use harness_lab::{Error, GuidancePolicy, StageConfig};
use serde::Deserialize;
use serde_json::{json, Value};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EXIT_CONFIG: u8 = 2;
const EXIT_CELLS: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "harness-lab", version, about = "Simulate and analyze staged agent harnesses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo sweeps from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides every sweep's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides every sweep's episode count.
        #[arg(long)]
        episodes: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Exact pass probabilities for every cell of the configured sweeps.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a diagnostic from JSON parameters and print JSON.
    Theory {
        #[arg(value_enum)]
        quantity: Quantity,
        /// Inline JSON, or `@path` to read it from a file.
        #[arg(long)]
        params: String,
    },
    /// Estimate the slice model of one agent and write `slice_model.json`.
    Slice {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        chunk: i64,
        #[arg(long)]
        total: i64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        tolerance: i64,
        #[arg(long, default_value_t = 10)]
        budget: u32,
        #[arg(long, default_value = "aligned")]
        policy: String,
        /// Episodes per Monte Carlo estimate when no exact value is available.
        #[arg(long, default_value_t = 50_000)]
        episodes: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Run the acceptance checks and write `verify.json`.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantity {
    Rho,
    Bound,
    Reachable,
    Slice,
    Filter,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoundParams {
    Stages(Vec<StageBoundInput>),
    Wrapped { stages: Vec<StageBoundInput> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReachableParams {
    total: f64,
    stages: u32,
    step_low: f64,
    step_high: f64,
    tolerance: f64,
    budget: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceParams {
    chunk: i64,
    total: i64,
    scaffold_cost: f64,
    /// Residual to risk; `null` is an impossible residual.
    kappa: BTreeMap<i64, Option<f64>>,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterParams {
    base_probs: Vec<f64>,
    weights: Vec<f64>,
    recoverable: Vec<bool>,
}

/// Failure classes that map to distinct exit codes.
enum Failure {
    Config(anyhow::Error),
    Cells(usize),
    Verify(usize),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Cells(n)) => {
            eprintln!("error: {n} cell(s) failed; partial results written");
            ExitCode::from(EXIT_CELLS)
        }
        Err(Failure::Verify(n)) => {
            eprintln!("error: {n} criterion(s) failed");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Sweep {
            config,
            out,
            seed,
            episodes,
            threads,
        } => {
            let mut specs = load_specs(&config)?;
            for s in &mut specs {
                if let Some(seed) = seed {
                    s.master_seed = seed;
                }
                if let Some(n) = episodes {
                    s.episodes = n;
                }
                s.validate().map_err(|e| Failure::Config(e.into()))?;
            }
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .context("configuring worker threads")?;
            }
            sweep(&specs, &out)
        }
        Command::Oracle { config, out } => {
            let specs = load_specs(&config)?;
            oracle(&specs, &out)
        }
        Command::Theory { quantity, params } => {
            let text = read_params(&params)?;
            let value = theory(quantity, &text).map_err(Failure::Config)?;
            emit!("{}", serde_json::to_string_pretty(&value).context("serializing")?);
            Ok(())
        }
        Command::Slice {
            agent,
            chunk,
            total,
            out,
            alpha,
            tolerance,
            budget,
            policy,
            episodes,
            seed,
        } => {
            let pool = NamedPool::builtin(&agent)
                .with_context(|| format!("unknown agent '{agent}' (small, medium, large, pruning, linear)"))
                .map_err(Failure::Config)?;
            let policy: GuidancePolicy = serde_json::from_value(Value::String(policy.clone()))
                .with_context(|| format!("unknown policy '{policy}' (aligned, misaligned, uniform)"))
                .map_err(Failure::Config)?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Failure::Config(anyhow::anyhow!("alpha must lie in (0, 1), got {alpha}")));
            }
            let config = StageConfig::new(tolerance, budget).map_err(|e| Failure::Config(e.into()))?;
            let est = estimate_slice_model(&pool, chunk, total, &config, policy, episodes, seed, alpha)
                .map_err(|e| Failure::Config(e.into()))?;
            std::fs::create_dir_all(&out).context("creating output directory")?;
            let path = out.join("slice_model.json");
            write_slice_json(&est, &path).context("writing slice model")?;
            emit!("{}: m_peak={} m_alpha={:?} convex={}", path.display(), est.m_peak, est.m_alpha, est.convex);
            Ok(())
        }
        Command::Verify { out } => verify(&out),
    }
}

fn load_specs(path: &Path) -> Result<Vec<SweepSpec>, Failure> {
    load_config(path).map_err(|e| match e {
        Error::Io(_) => Failure::Other(anyhow::Error::new(e).context(format!("reading {}", path.display()))),
        e => Failure::Config(anyhow::Error::new(e).context(format!("in {}", path.display()))),
    })
}

fn sweep(specs: &[SweepSpec], out: &Path) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("sweep", config_digest(specs));
    let mut outputs = Vec::new();
    for s in specs {
        eprintln!("{}: {} cells x {} episodes", s.name, s.cell_count(), s.episodes);
        let o = run_sweep(s).map_err(|e| Failure::Config(e.into()))?;
        manifest.record(&o, s.master_seed);
        outputs.push(o);
    }
    write_results(&outputs, out, &mut manifest).context("writing results")?;
    finish(manifest, out)
}

fn oracle(specs: &[SweepSpec], out: &Path) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("oracle", config_digest(specs));
    let mut outputs = Vec::new();
    for s in specs {
        let o = run_oracle_sweep(s).map_err(|e| Failure::Config(e.into()))?;
        manifest.record(&o, s.master_seed);
        outputs.push(o);
    }
    write_oracle_results(&outputs, out, &mut manifest).context("writing oracle tables")?;
    finish(manifest, out)
}

fn finish(mut manifest: RunManifest, out: &Path) -> Result<(), Failure> {
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for e in &manifest.cell_errors {
        eprintln!("cell error: {} {}: {}", e.sweep, e.cell, e.message);
    }
    let path = manifest.finish(out).context("writing manifest")?;
    for f in &manifest.files {
        emit!("{}", out.join(f).display());
    }
    emit!("{}", path.display());
    match manifest.cell_errors.len() {
        0 => Ok(()),
        n => Err(Failure::Cells(n)),
    }
}

fn read_params(params: &str) -> Result<String, Failure> {
    match params.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {path}"))
            .map_err(Failure::Other),
        None => Ok(params.to_string()),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> anyhow::Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid params at {path}: {}", e.into_inner())
    })
}

/// Non-finite values print as "inf", "-inf", or "nan".
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(format_float(x))
    }
}

/// Infinite risk prints as `null`, as in slice model files.
fn risk(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn theory(quantity: Quantity, text: &str) -> anyhow::Result<Value> {
    Ok(match quantity {
        Quantity::Rho => {
            let input: StageBoundInput = parse(text)?;
            json!({ "rho": num(mismatch_rho(&input)) })
        }
        Quantity::Bound => {
            let stages = match parse::<BoundParams>(text)? {
                BoundParams::Stages(s) | BoundParams::Wrapped { stages: s } => s,
            };
            let rho: Vec<Value> = stages.iter().map(|s| num(mismatch_rho(s))).collect();
            json!({ "bound": num(granularity_bound(&stages)?), "rho": rho })
        }
        Quantity::Reachable => {
            let p: ReachableParams = parse(text)?;
            let member =
                reachable_window_membership(p.total, p.stages, p.step_low, p.step_high, p.tolerance, p.budget)?;
            json!({ "subgoal": num(p.total / p.stages as f64), "reachable": member })
        }
        Quantity::Slice => {
            let p: SliceParams = parse(text)?;
            if !(p.alpha > 0.0 && p.alpha < 1.0) {
                bail!("alpha must lie in (0, 1), got {}", p.alpha);
            }
            let kappa = p.kappa.into_iter().map(|(d, k)| (d, k.unwrap_or(f64::INFINITY))).collect();
            let model = SliceModel::new(p.chunk, p.total, p.scaffold_cost, kappa)?;
            let objective = model.objective_values();
            let deltas = (0..model.max_coverage())
                .map(|m| marginal_delta(&model, m).map(risk))
                .collect::<harness_lab::Result<Vec<_>>>()?;
            json!({
                "objective": objective.iter().copied().map(risk).collect::<Vec<_>>(),
                "marginal_delta": deltas,
                "convex": check_discrete_convexity(&objective),
                "m_peak": find_m_peak(&model),
                "alpha": p.alpha,
                "m_alpha": find_m_alpha(&model, p.alpha)?,
            })
        }
        Quantity::Filter => {
            let p: FilterParams = parse(text)?;
            let inst = FilteringInstance::new(p.base_probs, p.weights, p.recoverable)?;
            let gap = retention_gap(&inst)?;
            let f = filtered_recoverability(&inst)?;
            json!({
                "gap": num(gap.gap),
                "base_log_odds": num(gap.base_log_odds),
                "base_recoverable": num(inst.base_recoverable_mass()),
                "filtered_recoverable": num(f.exact),
                "via_identity": num(f.via_identity),
            })
        }
    })
}

fn verify(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).context("creating output directory")?;
    let scratch = out.join("verify_scratch");
    std::fs::create_dir_all(&scratch).context("creating scratch directory")?;
    let reports = harness_lab::verify::run_all(&scratch);
    std::fs::remove_dir_all(&scratch).ok();
    for r in &reports {
        emit!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let doc = json!({
        "passed": failed == 0,
        "criteria": reports,
    });
    let text = serde_json::to_string_pretty(&doc).context("serializing report")? + "\n";
    std::fs::write(out.join("verify.json"), text).context("writing verify.json")?;
    match failed {
        0 => Ok(()),
        n => Err(Failure::Verify(n)),
    }
}
