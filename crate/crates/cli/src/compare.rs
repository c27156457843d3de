use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::experiment::RunMetrics;

/// Mean and sample standard deviation of bACC and GM for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: String,
    pub runs: usize,
    pub bacc_mean: f64,
    pub bacc_std: f64,
    pub gm_mean: f64,
    pub gm_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn load_metrics(run_dir: &Path) -> Result<RunMetrics> {
    let path = run_dir.join("metrics.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("run {}: missing metrics file {}", run_dir.display(), path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("run {}: bad metrics file", run_dir.display()))
}

/// Groups runs by mode, in order of first appearance.
pub fn compare(run_dirs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if run_dirs.len() < 2 {
        bail!("compare needs at least 2 runs, got {}", run_dirs.len());
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<RunMetrics>> = BTreeMap::new();
    for dir in run_dirs {
        let m = load_metrics(dir)?;
        if !groups.contains_key(&m.mode) {
            order.push(m.mode.clone());
        }
        groups.entry(m.mode.clone()).or_default().push(m);
    }
    Ok(order
        .into_iter()
        .map(|mode| {
            let runs = &groups[&mode];
            let (bacc_mean, bacc_std) = mean_std(&runs.iter().map(|r| r.mean_last.bacc).collect::<Vec<_>>());
            let (gm_mean, gm_std) = mean_std(&runs.iter().map(|r| r.mean_last.gm).collect::<Vec<_>>());
            CompareRow {
                runs: runs.len(),
                mode,
                bacc_mean,
                bacc_std,
                gm_mean,
                gm_std,
            }
        })
        .collect())
}

/// Aligned table with percentages as `mean±std`.
pub fn render_table(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.mode.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>4}  {:>14}  {:>14}", "mode", "runs", "bACC", "GM");
    for r in rows {
        let cell = |m: f64, s: f64| format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s);
        let _ = writeln!(
            out,
            "{:<width$}  {:>4}  {:>14}  {:>14}",
            r.mode,
            r.runs,
            cell(r.bacc_mean, r.bacc_std),
            cell(r.gm_mean, r.gm_std)
        );
    }
    out
}

pub fn write_csv(rows: &[CompareRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "runs", "bacc_mean", "bacc_std", "gm_mean", "gm_std"])?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            r.runs.to_string(),
            r.bacc_mean.to_string(),
            r.bacc_std.to_string(),
            r.gm_mean.to_string(),
            r.gm_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
