//! Seed sweeps of ASGD and SGD over a grid of sample sizes.
//!
//! Risk is always measured at the tail-averaged iterate `x̄_{t,n}` with
//! `t = ⌊fraction · n⌋`, so each grid point is an independent run rather
//! than a prefix of a longer one.

use asgd::oracle::minimax_reference;
use asgd::solvers::{asgd_run_from, default_sgd_step, sgd_run_from, TraceKind};
use asgd::stats::Welford;
use asgd::{Instance, Params};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub solver: String,
    pub n: usize,
    pub mean_excess_risk: f64,
    pub stderr: f64,
    /// `dσ²/n`.
    pub minimax: f64,
}

/// Aggregated curve points plus the per-seed risks they came from, in seed
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub points: Vec<CurvePoint>,
    pub per_seed: Vec<Vec<f64>>,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
enum Resolved {
    Asgd(Params),
    Sgd(f64),
}

fn resolve(solver: &SolverConfig, instance: &Instance) -> Result<Resolved, ConfigError> {
    Ok(match solver {
        SolverConfig::Asgd { .. } => Resolved::Asgd(solver.asgd_params(instance)?.expect("asgd solver")),
        SolverConfig::Sgd { step_size, .. } => Resolved::Sgd(step_size.unwrap_or_else(|| default_sgd_step(instance))),
    })
}

fn tail_risk(solver: &Resolved, instance: &Instance, x0: &DVector<f64>, n: usize, t: usize, seed: u64) -> f64 {
    let run = match solver {
        Resolved::Asgd(p) => asgd_run_from(instance, p, x0, n, t, seed, Some(n)),
        Resolved::Sgd(eta) => sgd_run_from(instance, *eta, x0, n, t, seed, Some(n)),
    };
    run.expect("validated configuration").tail_risk
}

/// Runs every `(solver, n, seed)` cell in parallel; seed `i` uses
/// `base_seed + i` for every solver, so solvers see the same samples.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CurveTable, ConfigError> {
    cfg.validate()?;
    let instance = cfg.instance()?;
    let x0 = cfg.start_point(&instance);
    let solvers: Vec<(String, Resolved)> =
        cfg.solvers.iter().map(|s| Ok((s.label(), resolve(s, &instance)?))).collect::<Result<_, ConfigError>>()?;
    let windows = cfg.windows();

    let cells: Vec<(usize, usize)> =
        (0..solvers.len()).flat_map(|s| (0..windows.len()).map(move |w| (s, w))).collect();
    let per_seed: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(s, w)| {
            let (n, t) = windows[w];
            (0..cfg.seeds as u64)
                .into_par_iter()
                .map(|i| tail_risk(&solvers[s].1, &instance, &x0, n, t, cfg.base_seed.wrapping_add(i)))
                .collect()
        })
        .collect();

    let sigma2 = instance.sigma2();
    let points = cells
        .iter()
        .zip(&per_seed)
        .map(|(&(s, w), risks)| {
            let acc: Welford<f64> = risks.iter().copied().collect();
            let n = windows[w].0;
            CurvePoint {
                solver: solvers[s].0.clone(),
                n,
                mean_excess_risk: acc.mean(),
                stderr: acc.stderr(),
                minimax: minimax_reference(instance.dim(), sigma2, n),
            }
        })
        .collect();
    Ok(CurveTable { points, per_seed, sigma2 })
}

/// Mean over seeds of the iterate excess risk at every step `0..=n` (no
/// averaging), for one solver from `x0`.
pub fn mean_iterate_risk(
    instance: &Instance,
    solver: &SolverConfig,
    x0: &DVector<f64>,
    n: usize,
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<f64>, ConfigError> {
    let resolved = resolve(solver, instance)?;
    let traces: Vec<Vec<f64>> = (0..seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            // Tail start n − 1 keeps every point but the last an iterate.
            let run = match &resolved {
                Resolved::Asgd(p) => asgd_run_from(instance, p, x0, n, n - 1, seed, Some(1)),
                Resolved::Sgd(eta) => sgd_run_from(instance, *eta, x0, n, n - 1, seed, Some(1)),
            }
            .expect("validated configuration");
            debug_assert!(run.risk_trace[..n].iter().all(|p| p.kind == TraceKind::Iterate));
            run.risk_trace.iter().map(|p| p.risk).collect()
        })
        .collect();
    let mut mean = vec![0.0; n + 1];
    for trace in &traces {
        for (m, r) in mean.iter_mut().zip(trace) {
            *m += r / seeds as f64;
        }
    }
    Ok(mean)
}

/// First index whose value is below `threshold`.
pub fn first_below(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&r| r < threshold)
}
