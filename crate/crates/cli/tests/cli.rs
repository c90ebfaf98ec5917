use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_harness-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"[{"kind": "granularity", "K": [1, 4, 10], "agents": ["small", "large"]},
            {"kind": "guidance_pool", "N": [2, 5], "per_episode": true}]"#,
    );
    let mut tables = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = run(&[
            "sweep", "--config", &config, "--out", out.to_str().unwrap(), "--episodes", "1500", "--seed", "42",
            "--threads", threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<Vec<u8>> = ["granularity.csv", "guidance_pool.csv", "guidance_pool_episodes.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["master_seeds"]["granularity"], 42);
        tables.push((files, manifest["config_digest"].clone()));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = write_config(dir.path(), r#"{"kind": "granularity", "K": [4, 0]}"#);
    let o = run(&["sweep", "--config", &bad, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K[1]"));

    let cells = write_config(dir.path(), r#"{"kind": "pruning", "removed": [0, 3], "K": 5, "episodes": 300}"#);
    let o = run(&["sweep", "--config", &cells, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    let csv = fs::read_to_string(Path::new(out).join("pruning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(Path::new(out).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cell_errors"].as_array().unwrap().len(), 1);

    let o = run(&["oracle", "--config", &cells, "--out", out]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(&["theory", "rho", "--params", r#"{"required_progress": 3}"#]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["slice", "--agent", "huge", "--chunk", "20", "--total", "100", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theory_outputs() {
    let v = stdout_json(&run(&[
        "theory",
        "rho",
        "--params",
        r#"{"required_progress": 25, "tolerance": 2, "windows": [{"low": 4, "high": 8, "sigma": 2}, {"low": 8, "high": 16, "sigma": 2.8}]}"#,
    ]));
    // nearest window [8, 16] widened by 2: gap 7, 49 / (2 · 2.8²)
    assert!((v["rho"].as_f64().unwrap() - 49.0 / (2.0 * 2.8 * 2.8)).abs() < 1e-12);

    let v = stdout_json(&run(&[
        "theory",
        "bound",
        "--params",
        r#"[{"required_progress": 5, "tolerance": 1, "windows": [{"low": 4, "high": 8, "sigma": 2}]},
            {"required_progress": 12, "tolerance": 1, "boundary_loss": 0.25, "windows": [{"low": 4, "high": 8, "sigma": 2}]}]"#,
    ]));
    let expected = (-(0.25 + 9.0 / 8.0f64)).exp();
    assert!((v["bound"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(v["rho"][0], 0.0);

    let v = stdout_json(&run(&[
        "theory",
        "reachable",
        "--params",
        r#"{"total": 100, "stages": 2, "step_low": 4, "step_high": 8, "tolerance": 2, "budget": 4}"#,
    ]));
    assert_eq!(v["reachable"], false);
    assert_eq!(v["subgoal"], 50.0);

    let v = stdout_json(&run(&[
        "theory",
        "slice",
        "--params",
        r#"{"chunk": 20, "total": 100, "scaffold_cost": 0.5, "alpha": 0.05,
            "kappa": {"100": null, "80": 3, "60": 1.5, "40": 0.75, "20": 0.125}}"#,
    ]));
    assert_eq!(v["objective"][0], serde_json::Value::Null);
    assert_eq!(v["objective"][1], 3.5);
    assert_eq!(v["m_peak"], 4);
    // objective 3.5, 2.5, 2.25, 2.125, 2.5; first value <= ln 20 is at m = 2
    assert_eq!(v["m_alpha"], 2);
    assert_eq!(v["convex"], true);

    let v = stdout_json(&run(&[
        "theory",
        "filter",
        "--params",
        r#"{"base_probs": [0.25, 0.25, 0.5], "weights": [0, 4, 1], "recoverable": [true, true, false]}"#,
    ]));
    assert!((v["gap"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((v["filtered_recoverable"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn theory_reads_params_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    fs::write(&path, r#"{"total": 100, "stages": 4, "step_low": 4, "step_high": 8, "tolerance": 2, "budget": 4}"#)
        .unwrap();
    let v = stdout_json(&run(&["theory", "reachable", "--params", &format!("@{}", path.display())]));
    assert_eq!(v["reachable"], true);
}

#[test]
fn slice_and_oracle_commands_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("slice");
    let o = run(&["slice", "--agent", "medium", "--chunk", "20", "--total", "100", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("slice_model.json")).unwrap()).unwrap();
    assert_eq!(v["alpha"], 0.5);
    assert_eq!(v["m_peak"], 1);
    assert_eq!(v["exact"], true);

    let config = write_config(dir.path(), r#"{"kind": "tolerance", "agents": "small", "epsilon": [0, 2, 4]}"#);
    let out = dir.path().join("oracle");
    let o = run(&["oracle", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("tolerance_oracle.csv")).unwrap();
    assert!(csv.starts_with("agent,epsilon,oracle_prob,oracle_mean_abs_final_bias\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).count(), 12);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["criteria"].as_array().unwrap().len(), 12);
    let passed = v["passed"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if passed { 0 } else { 4 }));
    assert!(!dir.path().join("verify_scratch").exists());
}
