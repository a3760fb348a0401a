//! CSV tables and JSON metadata side-files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

use super::config::ExperimentConfig;
use super::experiments::{Outcome, Table};
use crate::error::Result;

pub fn write_csv<W: Write>(table: &Table, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.render()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(table: &Table) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// `git describe` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn metadata(cfg: &ExperimentConfig, outcome: &Outcome) -> serde_json::Value {
    let fits: serde_json::Map<String, serde_json::Value> = outcome
        .fits
        .iter()
        .map(|(name, fit)| (name.clone(), serde_json::to_value(fit).expect("fit serializes")))
        .collect();
    json!({
        "kind": cfg.kind.name(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "git_describe": git_describe(),
        "config": cfg.to_toml(),
        "fits": fits,
        "notes": outcome.notes,
    })
}

/// Writes `<kind>.csv` and `<kind>.json` into `dir`; returns both paths.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", cfg.kind.name()));
    let json_path = dir.join(format!("{}.json", cfg.kind.name()));
    write_csv(&outcome.table, std::fs::File::create(&csv_path)?)?;
    let meta = serde_json::to_string_pretty(&metadata(cfg, outcome)).expect("metadata serializes");
    std::fs::write(&json_path, meta + "\n")?;
    Ok((csv_path, json_path))
}
