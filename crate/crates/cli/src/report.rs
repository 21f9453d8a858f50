//! Render aggregate JSON files into a plain-text table and a
//! gnuplot-compatible data file.

use std::path::Path;

use anyhow::Result;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct LoadedRecord {
    task: String,
    method: String,
    m: usize,
    trials: usize,
    mean_error: Option<f64>,
    #[serde(default)]
    rho_hat: Option<f64>,
    failed: usize,
}

#[derive(Debug, Deserialize)]
struct LoadedAggregate {
    records: Vec<LoadedRecord>,
}

/// Collect every parseable aggregate file under `dir` (sorted by name for
/// deterministic output).
fn collect(dir: &Path) -> Result<Vec<LoadedRecord>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    files.sort();
    let mut records = Vec::new();
    for file in files {
        let Ok(text) = std::fs::read_to_string(&file) else { continue };
        if let Ok(agg) = serde_json::from_str::<LoadedAggregate>(&text) {
            records.extend(agg.records);
        }
    }
    Ok(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6e}"),
        None => "-".to_string(),
    }
}

/// Plain-text table; header only when there are no records.
pub fn render_table(dir: &Path) -> Result<String> {
    let records = collect(dir)?;
    let mut out = format!(
        "{:<16} {:<24} {:>8} {:>7} {:>14} {:>14} {:>7}\n",
        "task", "method", "m", "trials", "mean_error", "rho_hat", "failed"
    );
    for r in &records {
        out.push_str(&format!(
            "{:<16} {:<24} {:>8} {:>7} {:>14} {:>14} {:>7}\n",
            r.task,
            r.method,
            r.m,
            r.trials,
            fmt_opt(r.mean_error),
            fmt_opt(r.rho_hat),
            r.failed
        ));
    }
    Ok(out)
}

/// Gnuplot data: one block per (task, method), columns `m mean_error
/// rho_hat`, blocks separated by blank lines.
pub fn render_dat(dir: &Path) -> Result<String> {
    let records = collect(dir)?;
    let mut keys: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.task.clone(), r.method.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = String::new();
    for (task, method) in keys {
        out.push_str(&format!("# {task} {method}\n"));
        let mut block: Vec<&LoadedRecord> = records
            .iter()
            .filter(|r| r.task == task && r.method == method)
            .collect();
        block.sort_by_key(|r| r.m);
        for r in block {
            out.push_str(&format!(
                "{} {} {}\n",
                r.m,
                r.mean_error.map(|x| x.to_string()).unwrap_or_else(|| "nan".into()),
                r.rho_hat.map(|x| x.to_string()).unwrap_or_else(|| "nan".into()),
            ));
        }
        out.push('\n');
    }
    Ok(out)
}
