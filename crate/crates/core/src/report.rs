//! CSV tables, slice-model JSON, and run manifests.
//!
//! Sweep CSV columns: the sweep kind's coordinate columns, then
//! `episodes,successes,pass_rate,ci_low,ci_high,mean_abs_final_bias,overshoot_count,drawlimit_count,oracle_prob`.
//! Absent values are empty fields. Floats carry 17 significant digits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::StageStatus;
use crate::error::{Error, Result};
use crate::sweeps::{CellError, CellResult, OracleRow, SliceEstimate, SweepOutput};
use crate::theory::marginal_delta;

pub const RESULT_COLUMNS: [&str; 9] = [
    "episodes",
    "successes",
    "pass_rate",
    "ci_low",
    "ci_high",
    "mean_abs_final_bias",
    "overshoot_count",
    "drawlimit_count",
    "oracle_prob",
];

pub const ORACLE_COLUMNS: [&str; 2] = ["oracle_prob", "oracle_mean_abs_final_bias"];

/// `%.17g`: shortest fixed or scientific form with 17 significant digits and
/// trailing zeros removed.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn result_fields(r: &CellResult) -> Vec<String> {
    let b = &r.batch;
    let mut row = r.coords.clone();
    row.extend([
        b.episodes.to_string(),
        b.successes.to_string(),
        format_float(b.pass_rate),
        format_float(b.ci_low),
        format_float(b.ci_high),
        opt_float(b.mean_abs_final_bias),
        b.failures(StageStatus::Overshoot).to_string(),
        b.failures(StageStatus::DrawLimit).to_string(),
        opt_float(r.oracle_prob),
    ]);
    row
}

/// Writes `<name>.csv` (and `<name>_episodes.csv` when per-episode data was kept).
pub fn write_sweep_csv(out: &SweepOutput<CellResult>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut header = out.columns();
    header.extend(RESULT_COLUMNS);
    let path = dir.join(format!("{}.csv", out.name));
    write_csv(&path, &header, out.rows.iter().map(result_fields))?;
    let mut written = vec![path];
    if out.rows.iter().any(|r| r.episodes.is_some()) {
        let mut header = out.columns();
        header.extend(["episode", "success", "failure", "final_bias"]);
        let path = dir.join(format!("{}_episodes.csv", out.name));
        let rows = out.rows.iter().flat_map(|r| {
            r.episodes.iter().flatten().enumerate().map(move |(i, e)| {
                let mut row = r.coords.clone();
                row.extend([
                    i.to_string(),
                    (e.success as u8).to_string(),
                    e.failure
                        .map(|s| match s {
                            StageStatus::Success => "success",
                            StageStatus::Overshoot => "overshoot",
                            StageStatus::DrawLimit => "draw_limit",
                        })
                        .unwrap_or_default()
                        .to_string(),
                    e.final_bias.map(|b| b.to_string()).unwrap_or_default(),
                ]);
                row
            })
        });
        write_csv(&path, &header, rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `<name>_oracle.csv`.
pub fn write_oracle_csv(out: &SweepOutput<OracleRow>, dir: &Path) -> Result<PathBuf> {
    let mut header = out.columns();
    header.extend(ORACLE_COLUMNS);
    let path = dir.join(format!("{}_oracle.csv", out.name));
    let rows = out.rows.iter().map(|r| {
        let mut row = r.coords.clone();
        row.push(opt_float(r.pass_prob));
        row.push(opt_float(r.mean_abs_final_bias));
        row
    });
    write_csv(&path, &header, rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct KappaEntry {
    coverage: i64,
    residual: i64,
    /// `null` encodes an impossible residual (infinite risk).
    kappa: Option<f64>,
    smoothed: bool,
    objective: Option<f64>,
    marginal_delta: Option<f64>,
}

#[derive(Serialize)]
struct SliceDocument<'a> {
    agent: &'a str,
    chunk: i64,
    total: i64,
    scaffold_cost: Option<f64>,
    scaffold_smoothed: bool,
    exact: bool,
    kappa: Vec<KappaEntry>,
    convex: bool,
    m_peak: i64,
    alpha: f64,
    m_alpha: Option<i64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn slice_json(s: &SliceEstimate) -> serde_json::Value {
    let m = &s.model;
    let kappa = (0..=m.max_coverage())
        .map(|c| {
            let d = m.residual(c);
            let k = m.kappa_table[&d];
            KappaEntry {
                coverage: c,
                residual: d,
                kappa: finite(k),
                smoothed: m.smoothed_flags.get(&d).copied().unwrap_or(false),
                objective: finite(c as f64 * m.scaffold_cost + k),
                marginal_delta: (c < m.max_coverage())
                    .then(|| marginal_delta(m, c).expect("on grid"))
                    .and_then(finite),
            }
        })
        .collect();
    let doc = SliceDocument {
        agent: &s.agent,
        chunk: s.chunk,
        total: s.total,
        scaffold_cost: finite(m.scaffold_cost),
        scaffold_smoothed: s.scaffold_smoothed,
        exact: s.exact,
        kappa,
        convex: s.convex,
        m_peak: s.m_peak,
        alpha: s.alpha,
        m_alpha: s.m_alpha,
    };
    serde_json::to_value(doc).expect("slice serializes")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_slice_json(s: &SliceEstimate, path: &Path) -> Result<()> {
    write_json(path, &slice_json(s))
}

/// File name for a slice model produced inside a sweep.
pub fn slice_file_name(sweep: &str, s: &SliceEstimate) -> String {
    format!("slice_model_{sweep}_{}_c{}.json", s.agent, s.chunk)
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestCellError {
    pub sweep: String,
    pub cell: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    pub master_seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
    pub rows: BTreeMap<String, usize>,
    pub files: Vec<String>,
    pub cell_errors: Vec<ManifestCellError>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_digest,
            master_seeds: BTreeMap::new(),
            started_at: now_rfc3339(),
            finished_at: String::new(),
            rows: BTreeMap::new(),
            files: Vec::new(),
            cell_errors: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn record<R>(&mut self, out: &SweepOutput<R>, seed: u64) {
        self.master_seeds.insert(out.name.clone(), seed);
        self.rows.insert(out.name.clone(), out.rows.len());
        self.cell_errors.extend(out.errors.iter().map(|CellError { cell, message }| ManifestCellError {
            sweep: out.name.clone(),
            cell: cell.clone(),
            message: message.clone(),
        }));
        self.warnings.extend(out.warnings.iter().map(|w| format!("{}: {w}", out.name)));
    }

    pub fn add_file(&mut self, path: &Path) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.files.push(name);
    }

    pub fn finish(&mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_at = now_rfc3339();
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Writes sweep tables and slice models; returns the written paths.
pub fn write_results(outputs: &[SweepOutput<CellResult>], dir: &Path, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for out in outputs {
        written.extend(write_sweep_csv(out, dir)?);
        for s in &out.slices {
            let path = dir.join(slice_file_name(&out.name, s));
            write_slice_json(s, &path)?;
            written.push(path);
        }
    }
    for p in &written {
        manifest.add_file(p);
    }
    Ok(written)
}

pub fn write_oracle_results(outputs: &[SweepOutput<OracleRow>], dir: &Path, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for out in outputs {
        written.push(write_oracle_csv(out, dir)?);
        for s in &out.slices {
            let path = dir.join(slice_file_name(&out.name, s));
            write_slice_json(s, &path)?;
            written.push(path);
        }
    }
    for p in &written {
        manifest.add_file(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(format_float(2.5e-10), "2.5000000000000002e-10");
        assert_eq!(format_float(1.5e20), "1.5e+20");
        assert_eq!(format_float(-12.25), "-12.25");
        for x in [0.1, 1.0 / 7.0, 123456.789, 6.02e23, 1e-300, 0.999_999_999_999_999_9, 7.743471586526233e-6] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
