//! Subcommand bodies. Each returns its report text so the binary only has
//! to print it and pick an exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use asgd::operators::{build_operator_set, predict_tail_covariance};
use asgd::oracle::{estimate_condition_numbers, excess_risk};
use asgd::solvers::{corollary1_bound, theorem1_bound};
use asgd::verify::{check_mc_agreement, run_suite, CheckReport, MC_MAX_DIM, MC_MAX_STEPS};
use nalgebra::DVector;

use crate::config::{ExperimentConfig, SolverConfig};
use crate::experiment::{run_experiment, CurveTable};
use crate::output::{emit_csv, emit_plot_script};

/// Report text plus the names of anything that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub failing: Vec<String>,
}

fn fmt_report(out: &mut String, key: &str, report: &CheckReport) {
    for e in &report.entries {
        let status = match (e.passed, e.informational) {
            (true, _) => "ok  ",
            (false, true) => "info",
            (false, false) => "FAIL",
        };
        let _ = writeln!(
            out,
            "{status} {key}/{name}: value {v:.6e} bound {b:.6e} margin {m:.3e}",
            name = e.name,
            v = e.value,
            b = e.bound,
            m = e.margin
        );
    }
}

pub fn condnum(cfg: &ExperimentConfig, samples: usize, seed: u64) -> Result<String> {
    let inst = cfg.instance()?;
    let est = estimate_condition_numbers(&inst, samples, seed);
    let mut out = String::new();
    let _ = writeln!(out, "d          {}", inst.dim());
    let _ = writeln!(out, "mu         {:.12e}", inst.mu);
    let _ = writeln!(out, "R^2        {:.12e}   (Monte-Carlo {:.6e} +- {:.2e})", inst.r2, est.r2.value, est.r2.stderr);
    let _ = writeln!(out, "kappa      {:.12e}", inst.kappa);
    let _ = writeln!(
        out,
        "kappa~     {:.12e}   (Monte-Carlo {:.6e} +- {:.2e})",
        inst.kappa_tilde, est.kappa_tilde.value, est.kappa_tilde.stderr
    );
    let _ = writeln!(out, "kappa*kappa~ {:.6e}", inst.kappa_product());
    let _ = writeln!(out, "({samples} samples, seed {seed})");
    Ok(out)
}

pub struct RunArtifacts {
    pub table: CurveTable,
    pub csv: PathBuf,
    pub plot: PathBuf,
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let table = run_experiment(cfg)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv = out_dir.join(&cfg.output.csv);
    let plot = out_dir.join(&cfg.output.plot);
    emit_csv(&table.points, &csv)?;
    let image = Path::new(&cfg.output.csv).with_extension("png");
    emit_plot_script(&table.points, &plot, &cfg.output.csv, &image.to_string_lossy())?;
    Ok(RunArtifacts { table, csv, plot })
}

pub fn summarize(table: &CurveTable) -> String {
    let mut out = format!("{:<10} {:>10} {:>14} {:>12} {:>12}\n", "solver", "n", "mean risk", "stderr", "minimax");
    for p in &table.points {
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>14.6e} {:>12.3e} {:>12.3e}",
            p.solver, p.n, p.mean_excess_risk, p.stderr, p.minimax
        );
    }
    out
}

/// Term-by-term bound report for every ASGD solver and grid point, with the
/// universal constant set to `constant`.
pub fn bound(cfg: &ExperimentConfig, constant: f64) -> Result<String> {
    let inst = cfg.instance()?;
    let p0 = excess_risk(&inst, &cfg.start_point(&inst));
    let mut out = format!("initial excess risk {p0:.6e}, C = {constant}\n");
    for solver in &cfg.solvers {
        let Some(params) = solver.asgd_params(&inst)? else { continue };
        let _ = writeln!(out, "[{}]", solver.label());
        let _ = writeln!(
            out,
            "{:>9} {:>9} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "n", "t", "lead_bias", "lead_var", "vanish_bias", "lower_var", "vanish_var", "total", "simplified"
        );
        for (n, t) in cfg.windows() {
            let b = theorem1_bound(&inst, &params, n, t, p0, constant)?;
            let simple = corollary1_bound(&inst, n, p0, constant);
            let _ = writeln!(
                out,
                "{n:>9} {t:>9} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                b.leading_bias, b.leading_variance, b.vanishing_bias, b.lower_order_variance, b.vanishing_variance, b.total,
                simple
            );
        }
    }
    Ok(out)
}

pub fn verify(dims: &[usize], trials: usize, seed: u64) -> Result<Outcome> {
    let mut text = String::new();
    let mut failing = Vec::new();
    for &d in dims {
        let suite = run_suite(d, trials, seed)?;
        for (key, report) in &suite {
            fmt_report(&mut text, key, report);
            failing.extend(report.failing().map(|e| format!("{key}/{}", e.name)));
        }
    }
    let _ = writeln!(text, "{} failing", failing.len());
    Ok(Outcome { text, failing })
}

/// Exact tail-covariance prediction next to a Monte-Carlo check for every
/// ASGD solver and every grid point with `n ≤ 500`.
pub fn predict(cfg: &ExperimentConfig, runs: usize, seed: u64) -> Result<Outcome> {
    let inst = cfg.instance()?;
    anyhow::ensure!(inst.dim() <= MC_MAX_DIM, "predict needs d <= {MC_MAX_DIM}, got {}", inst.dim());
    let x0 = cfg.start_point(&inst);
    let e0 = &x0 - &inst.x_star;
    let theta0 = DVector::from_iterator(2 * inst.dim(), e0.iter().chain(e0.iter()).copied());
    let mut text = String::new();
    let mut failing = Vec::new();
    for solver in cfg.solvers.iter().filter(|s| matches!(s, SolverConfig::Asgd { .. })) {
        let params = solver.asgd_params(&inst)?.expect("asgd solver");
        let ops = build_operator_set(&inst, &params)?;
        for (n, t) in cfg.windows() {
            if n > MC_MAX_STEPS {
                let _ = writeln!(text, "[{} n={n}] skipped: Monte-Carlo check is limited to n <= {MC_MAX_STEPS}", solver.label());
                continue;
            }
            let pred = predict_tail_covariance(&ops, &theta0, t, n)?;
            let _ = writeln!(
                text,
                "[{} n={n} t={t}] predicted risk {:.6e} (bias {:.6e}, variance {:.6e})",
                solver.label(),
                pred.total_risk,
                pred.bias_risk,
                pred.variance_risk
            );
            let report = check_mc_agreement(&inst, &params, &theta0, t, n, runs, seed)?;
            let key = format!("{}/n{n}", solver.label());
            fmt_report(&mut text, &key, &report);
            failing.extend(report.failing().map(|e| format!("{key}/{}", e.name)));
        }
    }
    Ok(Outcome { text, failing })
}
