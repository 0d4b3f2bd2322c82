//! CSV and plot-script writers for curve tables.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::experiment::CurvePoint;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("curve table is empty")]
    EmptyTable,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub const CSV_HEADER: &str = "solver,n,mean_excess_risk,stderr,minimax";

/// 17 significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn sorted(points: &[CurvePoint]) -> Vec<&CurvePoint> {
    let mut rows: Vec<&CurvePoint> = points.iter().collect();
    rows.sort_by(|a, b| a.solver.cmp(&b.solver).then(a.n.cmp(&b.n)));
    rows
}

fn write(path: &Path, text: &str) -> Result<(), OutputError> {
    std::fs::write(path, text).map_err(|source| OutputError::Io { path: path.display().to_string(), source })
}

pub fn render_csv(points: &[CurvePoint]) -> Result<String, OutputError> {
    if points.is_empty() {
        return Err(OutputError::EmptyTable);
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in sorted(points) {
        let _ = writeln!(out, "{},{},{},{},{}", p.solver, p.n, num(p.mean_excess_risk), num(p.stderr), num(p.minimax));
    }
    Ok(out)
}

/// Writes the table sorted by `(solver, n)`. Nothing is written for an
/// empty table.
pub fn emit_csv(points: &[CurvePoint], path: &Path) -> Result<(), OutputError> {
    write(path, &render_csv(points)?)
}

/// Names of the plotted series: one per solver, plus the minimax reference
/// unless it is identically zero.
pub fn series_names(points: &[CurvePoint]) -> Vec<String> {
    let mut names: Vec<String> = sorted(points).iter().map(|p| p.solver.clone()).collect();
    names.dedup();
    if points.iter().any(|p| p.minimax > 0.0) {
        names.push("minimax".into());
    }
    names
}

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn render_plot_script(points: &[CurvePoint], csv_name: &str, image_name: &str) -> Result<String, OutputError> {
    if points.is_empty() {
        return Err(OutputError::EmptyTable);
    }
    let series = series_names(points);
    Ok(format!(
        r#"#!/usr/bin/env python3
"""Excess risk of the tail-averaged iterate against the number of samples (log-log)."""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = os.path.join(HERE, {csv:?})
IMAGE = os.path.join(HERE, {image:?})
SERIES = {series}

with open(CSV, newline="") as fh:
    rows = list(csv.DictReader(fh))

fig, ax = plt.subplots(figsize=(6.0, 4.5))
for name in SERIES:
    if name == "minimax":
        ref = sorted({{(int(r["n"]), float(r["minimax"])) for r in rows}})
        ax.plot([n for n, _ in ref], [m for _, m in ref], "k--", label="minimax d sigma^2 / n")
        continue
    pts = sorted((int(r["n"]), float(r["mean_excess_risk"]), float(r["stderr"])) for r in rows if r["solver"] == name)
    ax.errorbar(
        [p[0] for p in pts],
        [p[1] for p in pts],
        yerr=[p[2] for p in pts],
        marker="o",
        markersize=3,
        capsize=2,
        label=name,
    )
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("number of samples n")
ax.set_ylabel("excess risk of tail average")
ax.legend()
fig.tight_layout()
fig.savefig(IMAGE, dpi=150)
"#,
        csv = csv_name,
        image = image_name,
        series = py_list(&series),
    ))
}

/// Writes a matplotlib script that reads `csv_name` from its own directory
/// and saves `image_name` next to it.
pub fn emit_plot_script(points: &[CurvePoint], path: &Path, csv_name: &str, image_name: &str) -> Result<(), OutputError> {
    write(path, &render_plot_script(points, csv_name, image_name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(solver: &str, n: usize, minimax: f64) -> CurvePoint {
        CurvePoint { solver: solver.into(), n, mean_excess_risk: 0.1, stderr: 0.01, minimax }
    }

    #[test]
    fn one_row_is_two_lines() {
        let csv = render_csv(&[point("asgd", 10, 0.2)]).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields[0], "asgd");
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn rows_are_sorted() {
        let csv = render_csv(&[point("sgd", 10, 0.0), point("asgd", 100, 0.0), point("asgd", 10, 0.0)]).unwrap();
        let keys: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
        assert_eq!(keys, ["asgd,10", "asgd,100", "sgd,10"]);
    }

    #[test]
    fn values_round_trip() {
        let x = 0.1 + 0.2;
        let csv = render_csv(&[CurvePoint { solver: "a".into(), n: 1, mean_excess_risk: x, stderr: 1e-300, minimax: 0.0 }])
            .unwrap();
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap(), x);
        assert_eq!(fields[3].parse::<f64>().unwrap(), 1e-300);
    }

    #[test]
    fn series_include_minimax_only_with_noise() {
        let noisy = [point("asgd", 10, 0.2), point("sgd", 10, 0.2)];
        assert_eq!(series_names(&noisy), ["asgd", "sgd", "minimax"]);
        let script = render_plot_script(&noisy, "c.csv", "c.png").unwrap();
        assert!(script.contains(r#"SERIES = ["asgd", "sgd", "minimax"]"#));
        let quiet = [point("asgd", 10, 0.0), point("sgd", 10, 0.0)];
        assert_eq!(series_names(&quiet), ["asgd", "sgd"]);
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        assert!(matches!(emit_csv(&[], &path), Err(OutputError::EmptyTable)));
        assert!(!path.exists());
        let script = dir.path().join("plot.py");
        assert!(emit_plot_script(&[], &script, "out.csv", "out.png").is_err());
        assert!(!script.exists());
    }
}
