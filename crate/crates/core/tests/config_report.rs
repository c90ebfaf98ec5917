use std::fs;
use std::path::Path;

use harness_lab::config::{config_digest, parse_config};
use harness_lab::report::{write_oracle_results, write_results, RunManifest};
use harness_lab::sweeps::{run_oracle_sweep, run_sweep};
use harness_lab::Error;

const GRANULARITY_HEADER: &str =
    "agent,K,episodes,successes,pass_rate,ci_low,ci_high,mean_abs_final_bias,overshoot_count,drawlimit_count,oracle_prob";

fn run(text: &str, dir: &Path) -> RunManifest {
    let specs = parse_config(text).unwrap();
    let mut manifest = RunManifest::new("sweep", config_digest(&specs));
    let outputs: Vec<_> = specs.iter().map(|s| run_sweep(s).unwrap()).collect();
    for (s, out) in specs.iter().zip(&outputs) {
        manifest.record(out, s.master_seed);
    }
    write_results(&outputs, dir, &mut manifest).unwrap();
    manifest.finish(dir).unwrap();
    manifest
}

#[test]
fn granularity_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    run(r#"{"kind": "granularity", "K": [1, 5, 20], "episodes": 2000, "seed": 11}"#, dir.path());
    let text = fs::read_to_string(dir.path().join("granularity.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), GRANULARITY_HEADER);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        assert_eq!(row.len(), 11);
        assert_eq!(row[2], "2000");
        let successes: u64 = row[3].parse().unwrap();
        let rate: f64 = row[4].parse().unwrap();
        assert_eq!(rate, successes as f64 / 2000.0);
        let (lo, hi): (f64, f64) = (row[5].parse().unwrap(), row[6].parse().unwrap());
        assert!(lo <= rate && rate <= hi);
        assert_eq!(row[7].is_empty(), successes == 0);
        let fails: u64 = row[8].parse::<u64>().unwrap() + row[9].parse::<u64>().unwrap();
        assert_eq!(fails + successes, 2000);
        let oracle: f64 = row[10].parse().unwrap();
        assert!((0.0..=1.0).contains(&oracle));
    }
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>()[..3], ["small", "small", "small"]);
}

#[test]
fn reruns_are_byte_identical() {
    let config = r#"[
        {"kind": "granularity", "K": [2, 10], "agents": "medium", "episodes": 3000},
        {"kind": "guidance_pool", "N": [1, 3], "episodes": 3000, "per_episode": true},
        {"kind": "pruning", "removed": [0, 1], "K": 5, "episodes": 2000}
    ]"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run(config, a.path());
    let mb = run(config, b.path());
    assert_eq!(ma.files, mb.files);
    assert!(ma.files.contains(&"guidance_pool_episodes.csv".to_string()));
    for f in &ma.files {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn partial_harness_writes_slice_models() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(
        r#"{"kind": "partial_harness", "agents": ["small", "large"], "r": [0, 1, 2, 3, 4, 5], "episodes": 4000}"#,
        dir.path(),
    );
    for agent in ["small", "large"] {
        let name = format!("slice_model_partial_harness_{agent}_c20.json");
        assert!(m.files.contains(&name), "{:?}", m.files);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(&name)).unwrap()).unwrap();
        assert_eq!(v["alpha"], 0.5);
        assert!(v["m_peak"].as_i64().is_some());
        assert!(v.get("m_alpha").is_some());
        assert_eq!(v["kappa"].as_array().unwrap().len(), 6);
        assert_eq!(v["exact"], true);
    }
}

#[test]
fn manifest_records_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"kind": "tolerance", "name": "tol", "agents": "small", "epsilon": [0, 1, 2], "episodes": 500, "seed": 5}"#;
    run(text, dir.path());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(v["command"], "sweep");
    assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(v["config_digest"].as_str().unwrap(), config_digest(&parse_config(text).unwrap()));
    assert_eq!(v["master_seeds"]["tol"], 5);
    assert_eq!(v["rows"]["tol"], 3);
    assert_eq!(v["files"][0], "tol.csv");
    for key in ["tool", "tool_version", "started_at", "finished_at", "cell_errors", "warnings"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn oracle_tables_cover_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let specs = parse_config(r#"{"kind": "retry_budget", "R": [1, 2, 3]}"#).unwrap();
    let out = run_oracle_sweep(&specs[0]).unwrap();
    let mut manifest = RunManifest::new("oracle", config_digest(&specs));
    write_oracle_results(std::slice::from_ref(&out), dir.path(), &mut manifest).unwrap();
    let text = fs::read_to_string(dir.path().join("retry_budget_oracle.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "agent,R,oracle_prob,oracle_mean_abs_final_bias");
    let probs: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect::<Vec<f64>>()
        .chunks(3)
        .map(<[f64]>::to_vec)
        .collect();
    assert_eq!(probs.len(), 3);
    for agent in probs {
        assert!(agent.windows(2).all(|w| w[1] >= w[0]), "{agent:?}");
    }
}

#[test]
fn config_errors_carry_paths() {
    let err = |text: &str| match parse_config(text) {
        Err(Error::Config { path, .. }) => path,
        other => panic!("expected config error, got {other:?}"),
    };
    assert_eq!(err(r#"{"kind": "granularity", "K": [1, 0]}"#), "K[1]");
    assert_eq!(err(r#"[{"kind": "tolerance"}, {"kind": "granularity", "K": [3, 3]}]"#), "[1].K[1]");
    assert!(parse_config(r#"{"kind": "granularity", "bogus": 1}"#).unwrap_err().to_string().contains("bogus"));
    assert_eq!(err(r#"{"kind": "granularity", "agents": ["small", "tiny"]}"#), "agents[1]");
    assert!(parse_config(r#"{"kind": "granularity", "R": [2, 3]}"#).is_err());
}
