//! Numerical checks of the lemmas and identities behind the accelerated
//! method, on top of the exact operator engine.
//!
//! Every check returns a [`CheckReport`] of `(value, bound, margin)` entries.
//! Informational entries are reported but never fail a report.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AsgdError, Result};
use crate::linalg::{
    block2, frobenius_inner, frobenius_norm, max_sym_eigenvalue, min_sym_eigenvalue, spectral_norm,
    symmetrize, unvectorize, vectorize,
};
use crate::model::{build_instance, AsgdParams, DistributionSpec, NoiseModel, ParamConstants, ProblemInstance};
use crate::operators::{
    build_operator_set, h_block_inner, predict_tail_covariance, solve_second_moment_u, stationary_covariance,
    OperatorSet,
};
use crate::oracle::rng_for;
use crate::solvers::AsgdStepper;
use crate::stats::MatrixWelford;
use crate::Scalar;

/// Relative tolerance for exact algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Relative tolerance for resolvent-based PSD gaps.
pub const PSD_TOL: f64 = 1e-8;
/// Monte-Carlo agreement threshold in standard errors.
pub const MC_SIGMAS: f64 = 5.0;
pub const MC_MIN_RUNS: usize = 10_000;
pub const MC_MAX_DIM: usize = 4;
pub const MC_MAX_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// Distance to the bound, positive when the entry holds.
    pub margin: f64,
    pub passed: bool,
    pub informational: bool,
}

impl CheckEntry {
    /// Holds when `value ≤ bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        let margin = bound - value;
        Self { name: name.into(), value, bound, margin, passed: margin >= 0.0, informational: false }
    }

    /// Holds when `value ≥ bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        let margin = value - bound;
        Self { name: name.into(), value, bound, margin, passed: margin >= 0.0, informational: false }
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    /// Whether the entry counts against its report.
    pub fn failed(&self) -> bool {
        !self.informational && !self.passed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: String,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>) -> Self {
        Self { check: check.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.failed())
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.failed())
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn f<T: Scalar>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn uses_theorem1_constants<T: Scalar>(params: &AsgdParams<T>) -> bool {
    let Some(k) = params.constants else { return false };
    let reference = ParamConstants::<f64>::theorem1();
    let close = |a: T, b: f64| (f(a) - b).abs() <= 1e-12 * b.abs();
    close(k.c1, reference.c1) && close(k.c2, reference.c2) && close(k.c3, reference.c3) && close(k.c4, reference.c4)
}

fn relative_residual<T: Scalar>(lhs: &DMatrix<T>, rhs: &DMatrix<T>) -> f64 {
    let scale = f(frobenius_norm(rhs)).max(f(frobenius_norm(lhs)));
    let diff = f(frobenius_norm(&(lhs - rhs)));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn gaussian_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Contraction of the `G`-weighted potential under one expected step:
/// worst `⟨G, 𝔅(θθᵀ)⟩ / ⟨G, θθᵀ⟩` over Gaussian `θ` against
/// `1 − c₂c₃√(2c₁−c₁²)/√(κκ̃)` (which is `1 − 1/(9√(κκ̃))` for the default
/// constants). Only the default constants carry the guarantee; for others the
/// entry is informational.
pub fn check_bias_contraction<T: Scalar>(ops: &OperatorSet<T>, trials: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport::new("bias_contraction");
    let k = f(ops.instance.kappa_product());
    let constants = ops.params.constants.unwrap_or_else(ParamConstants::theorem1);
    let gap = f(constants.c3 * constants.rate_factor()) / k.sqrt();
    let rate = 1.0 - gap;

    let mut rng = rng_for(seed, 0xB1A5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let theta: DVector<T> = gaussian_vector(&mut rng, 2 * ops.dim());
        let s = &theta * theta.transpose();
        let before = f(frobenius_inner(&ops.g, &s));
        let after = f(frobenius_inner(&ops.g, &ops.apply_b(&s)));
        if before > 0.0 {
            worst = worst.max(after / before);
        }
    }
    let entry = CheckEntry::at_most("worst_ratio", worst, rate + 1e-9);
    report.push(if uses_theorem1_constants(&ops.params) { entry } else { entry.informational() });
    report
}

/// `φ∞ = (I − 𝔅)⁻¹Σ̂ ≼ 5σ²((2/3)κ̃⁻¹H⁻¹ + (5/6)δI)` on both diagonal blocks.
pub fn check_stationary_bound<T: Scalar>(ops: &OperatorSet<T>) -> CheckReport {
    let mut report = CheckReport::new("stationary_bound");
    let inst = &ops.instance;
    let d = ops.dim();
    let five_s2 = T::lit(5.0) * inst.sigma2();
    let block = (inst.h_inv() * (T::lit(2.0 / 3.0) / inst.kappa_tilde)
        + DMatrix::identity(d, d) * (T::lit(5.0 / 6.0) * ops.params.delta))
        * five_s2;
    let zero = DMatrix::zeros(d, d);
    let bound = block2(&block, &zero, &zero, &block);
    let scale = f(spectral_norm(&bound));
    match stationary_covariance(ops) {
        Ok(phi) => {
            let gap = f(min_sym_eigenvalue(&(&bound - &phi)));
            let entry = CheckEntry::at_least("psd_gap", gap, -PSD_TOL * scale);
            report.push(if uses_theorem1_constants(&ops.params) { entry } else { entry.informational() });
            let residual = relative_residual(&(ops.apply_b(&phi) + &ops.sigma_hat), &phi);
            report.push(CheckEntry::at_most("fixed_point_residual", residual, PSD_TOL));
        }
        Err(e) => report.push(CheckEntry::at_least(format!("stationary_solve: {e}"), f64::NAN, 0.0)),
    }
    report
}

/// `⟨[[H,0],[0,0]], L(φ∞)⟩ ≤ 5σ²d` with `L` the averaging weight.
pub fn check_leading_variance<T: Scalar>(ops: &OperatorSet<T>) -> CheckReport {
    let mut report = CheckReport::new("leading_variance");
    let bound = 5.0 * f(ops.instance.sigma2()) * ops.dim() as f64;
    let value = stationary_covariance(ops).and_then(|phi| ops.averaging_weight(&phi));
    match value {
        Ok(l) => report.push(CheckEntry::at_most("value", f(h_block_inner(ops, &l)), bound * (1.0 + PSD_TOL))),
        Err(e) => report.push(CheckEntry::at_most(format!("solve: {e}"), f64::NAN, bound)),
    }
    report
}

/// Per-direction 2×2 blocks `[[m11, m12], [m21, m22]]` laid out as a `2d × 2d`
/// matrix with diagonal `d × d` blocks.
fn per_direction<T: Scalar>(lambdas: &[T], blk: impl Fn(T) -> [T; 4]) -> DMatrix<T> {
    let d = lambdas.len();
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for (i, &l) in lambdas.iter().enumerate() {
        let [m11, m12, m21, m22] = blk(l);
        out[(i, i)] = m11;
        out[(i, d + i)] = m12;
        out[(d + i, i)] = m21;
        out[(d + i, d + i)] = m22;
    }
    out
}

/// Resolvent identities for `A`, its spectral radius and power-norm bounds,
/// and the conditioning of `G` (informational).
pub fn check_matrix_identities<T: Scalar>(ops: &OperatorSet<T>, trials: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport::new("matrix_identities");
    let AsgdParams { alpha, delta, c, g_hat, .. } = ops.params;
    let one = T::one();
    let m = 2 * ops.dim();
    let lambdas: Vec<T> = ops.instance.h_diag.iter().copied().collect();
    let hb = ops.h_block();
    let gap = g_hat - c * delta;
    let eye = DMatrix::<T>::identity(m, m);
    let lu = (&eye - &ops.a).lu();
    let lu_t = (&eye - ops.a.transpose()).lu();
    if !lu.is_invertible() {
        report.push(CheckEntry::at_most("i_minus_a_invertible", f64::INFINITY, 0.0));
        return report;
    }
    // LU solves rather than an explicit inverse: nalgebra's inverse loses
    // about three digits on these matrices.
    let left = |x: &DMatrix<T>| lu.solve(x).expect("invertible");
    let left_t = |x: &DMatrix<T>| lu_t.solve(x).expect("invertible");

    // (I + (I−A_L)⁻¹A_L + (I−A_Rᵀ)⁻¹A_Rᵀ)(I − A_L A_Rᵀ)⁻¹ S = (I−A)⁻¹ S (I−Aᵀ)⁻¹
    let n2 = m * m;
    let lu_d = (DMatrix::<T>::identity(n2, n2) - &ops.d_mat).lu();
    let mut rng = rng_for(seed, 0x1D);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        // Random vec-basis matrices; linearity covers everything else.
        let mut s = DMatrix::zeros(m, m);
        s[rng.random_range(0..n2)] = one;
        let residual = match lu_d.solve(&vectorize(&s)) {
            Some(v) => match ops.averaging_weight(&unvectorize(&v, m)) {
                Ok(lhs) => relative_residual(&lhs, &left(&left(&s).transpose()).transpose()),
                Err(_) => f64::INFINITY,
            },
            None => f64::INFINITY,
        };
        worst = worst.max(residual);
    }
    report.push(CheckEntry::at_most("lhs_psd", worst, IDENTITY_TOL));

    let com3 = per_direction(&lambdas, |l| [-(c - g_hat * l) / gap, T::zero(), (one - delta * l) / gap, T::zero()]);
    report.push(CheckEntry::at_most("com3", relative_residual(&left_t(&hb), &com3), IDENTITY_TOL));

    let com1 = per_direction(&lambdas, |l| {
        let (p, q) = (-(c - g_hat * l), one - delta * l);
        let s = one / (gap * gap * l);
        [p * p * s, p * q * s, p * q * s, q * q * s]
    });
    report.push(CheckEntry::at_most("com1", relative_residual(&left_t(&left_t(&hb).transpose()).transpose(), &com1), IDENTITY_TOL));

    let com2_lhs = left_t(&left_t(&(ops.a.transpose() * &hb)));
    let com2 = per_direction(&lambdas, |l| {
        let s = (one - delta * l) / (gap * gap * l);
        [(-c * (one - c) - c * g_hat * l) * s, T::zero(), ((one - c) + c * delta * l) * s, T::zero()]
    });
    report.push(CheckEntry::at_most("com2", relative_residual(&com2_lhs, &com2), IDENTITY_TOL));
    // The published display carries `− cδλ` in the lower entry; kept visible
    // so the discrepancy shows up in reports.
    let com2_printed = per_direction(&lambdas, |l| {
        let s = (one - delta * l) / (gap * gap * l);
        [(-c * (one - c) - c * g_hat * l) * s, T::zero(), ((one - c) - c * delta * l) * s, T::zero()]
    });
    report.push(
        CheckEntry::at_most("com2_as_printed", relative_residual(&com2_lhs, &com2_printed), IDENTITY_TOL)
            .informational(),
    );

    // The eigenvalue and power bounds rely on the default constants.
    let default = uses_theorem1_constants(&ops.params);
    let gate = |e: CheckEntry| if default { e } else { e.informational() };
    let sqrt_alpha = f(alpha.sqrt());
    report.push(gate(CheckEntry::at_most("spectral_radius_a", f(ops.rho_a), sqrt_alpha + IDENTITY_TOL)));
    let mut power = ops.a.clone();
    let mut worst_ratio = 0.0f64;
    for k in 1..=50usize {
        if k > 1 {
            power = &power * &ops.a;
        }
        let bound = 3.0 * 2f64.sqrt() * k as f64 * sqrt_alpha.powi(k as i32 - 1);
        worst_ratio = worst_ratio.max(f(spectral_norm(&power)) / bound);
    }
    report.push(gate(CheckEntry::at_most("power_norm_ratio", worst_ratio, 1.0 + IDENTITY_TOL)));

    let ev = crate::linalg::sym_eigenvalues(&ops.g);
    let cond_g = f(ev.max()) / f(ev.min());
    let a = f(alpha);
    let kappa = f(ops.instance.kappa);
    report.push(CheckEntry::at_most("cond_g", cond_g, 4.0 * kappa / (1.0 - a * a).sqrt()).informational());
    report
}

/// Second-moment-only stationary matrix `U`: direct solve against closed
/// forms, the `u₂₂` bound and `M(U₂₂) ≼ (4/5)H`. The two bounds are stated
/// for the default constants and are informational otherwise.
pub fn check_second_moment<T: Scalar>(instance: &ProblemInstance<T>, params: &AsgdParams<T>) -> CheckReport {
    let mut report = CheckReport::new("second_moment");
    let blocks = match solve_second_moment_u(instance, params) {
        Ok(b) => b,
        Err(e) => {
            report.push(CheckEntry::at_most(format!("solve: {e}"), f64::INFINITY, 0.0));
            return report;
        }
    };
    let rel = |a: T, b: T| {
        let scale = f(a.abs()).max(f(b.abs()));
        if scale == 0.0 {
            0.0
        } else {
            f((a - b).abs()) / scale
        }
    };
    let worst = blocks
        .direct
        .iter()
        .zip(&blocks.closed_form)
        .map(|(u, v)| rel(u.u11, v.u11).max(rel(u.u12, v.u12)).max(rel(u.u22, v.u22)))
        .fold(0.0f64, f64::max);
    report.push(CheckEntry::at_most("closed_form_residual", worst, IDENTITY_TOL));

    let default = uses_theorem1_constants(params);
    let gate = |e: CheckEntry| if default { e } else { e.informational() };
    let c4 = f(params.constants.unwrap_or_else(ParamConstants::theorem1).c4);
    let kt = f(instance.kappa_tilde);
    let dl = f(params.delta);
    let worst_u22 = blocks
        .lambdas
        .iter()
        .zip(&blocks.direct)
        .map(|(&l, u)| f(u.u22) / (6.0 * c4 / (f(l) * kt) + dl / 2.0))
        .fold(0.0f64, f64::max);
    report.push(gate(CheckEntry::at_most("u22_bound_ratio", worst_u22, 1.0)));

    // Largest eigenvalue of H^{-1/2} M(U₂₂) H^{-1/2} against 4/5.
    let m = instance.fourth_moment(&blocks.u22_matrix());
    let scale = DMatrix::from_diagonal(&instance.h_diag.map(|l| T::one() / l.sqrt()));
    let top = f(max_sym_eigenvalue(&(&scale * m * &scale)));
    report.push(gate(CheckEntry::at_most("fourth_moment_ratio", top, 0.8 + IDENTITY_TOL)));
    report
}

/// Runs `runs` independent copies of the recursion from `θ₀` and compares the
/// empirical second moment of `θ̄_{t,n}` with the exact prediction, entrywise
/// within five standard errors. Three configurations: bias only (noise off),
/// variance only (`θ₀ = 0`) and mixed.
///
/// Runs are split into a fixed number of chunks, each with its own random
/// stream, and merged in chunk order, so the result does not depend on the
/// number of threads.
pub fn check_mc_agreement<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    theta0: &DVector<T>,
    t: usize,
    n: usize,
    runs: usize,
    seed: u64,
) -> Result<CheckReport> {
    let d = instance.dim();
    if runs < MC_MIN_RUNS {
        return Err(AsgdError::InsufficientRuns { runs, required: MC_MIN_RUNS });
    }
    if d > MC_MAX_DIM {
        return Err(AsgdError::DimensionTooLarge { d, limit: MC_MAX_DIM });
    }
    if t >= n || n > MC_MAX_STEPS {
        return Err(AsgdError::InvalidHorizon { t, n });
    }
    if theta0.len() != 2 * d {
        return Err(AsgdError::DimensionMismatch { expected: 2 * d, got: theta0.len() });
    }

    let quiet = ProblemInstance { noise: NoiseModel::Noiseless, ..instance.clone() };
    let zero = DVector::zeros(2 * d);
    let configs: [(&str, &ProblemInstance<T>, &DVector<T>); 3] =
        [("bias_only", &quiet, theta0), ("variance_only", instance, &zero), ("mixed", instance, theta0)];

    let mut report = CheckReport::new("mc_agreement");
    for (k, (label, inst, th)) in configs.into_iter().enumerate() {
        let ops = build_operator_set(inst, params)?;
        let predicted = predict_tail_covariance(&ops, th, t, n)?.total;
        let acc = simulate_tail_moment(inst, params, th, t, n, runs, seed.wrapping_add(k as u64));
        let se = acc.stderr();
        let slack = 64.0 * f64::EPSILON * predicted.iter().map(|v| f(v.abs())).fold(0.0, f64::max);
        let mut worst_z = 0.0f64;
        for ((e, p), s) in acc.mean().iter().zip(predicted.iter()).zip(se.iter()) {
            let diff = (f(*e) - f(*p)).abs();
            let z = if diff <= slack { 0.0 } else { diff / f(*s) };
            worst_z = worst_z.max(z);
        }
        report.push(CheckEntry::at_most(format!("{label}_worst_z"), worst_z, MC_SIGMAS));
    }
    Ok(report)
}

const MC_CHUNKS: u64 = 64;

fn simulate_tail_moment<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    theta0: &DVector<T>,
    t: usize,
    n: usize,
    runs: usize,
    seed: u64,
) -> MatrixWelford<T> {
    let d = instance.dim();
    let x0 = theta0.rows(0, d) + &instance.x_star;
    let y0 = theta0.rows(d, d) + &instance.x_star;
    let threads = std::thread::available_parallelism().map_or(1, |p| p.get()).min(MC_CHUNKS as usize);
    let per_chunk = |chunk: u64| {
        let lo = runs * chunk as usize / MC_CHUNKS as usize;
        let hi = runs * (chunk as usize + 1) / MC_CHUNKS as usize;
        let mut rng = rng_for(seed, chunk);
        let mut acc = MatrixWelford::new(2 * d, 2 * d);
        let w = T::from_usize_lossy(n - t);
        let alpha = params.alpha;
        for _ in lo..hi {
            let mut stepper = AsgdStepper::from_xy(instance, *params, x0.clone(), &y0, t);
            let mut sum = DVector::<T>::zeros(2 * d);
            for j in 1..=n {
                stepper.step(&mut rng);
                if j > t {
                    let (x, v) = (stepper.x(), stepper.v());
                    for i in 0..d {
                        let xs = instance.x_star[i];
                        sum[i] += x[i] - xs;
                        sum[d + i] += alpha * x[i] + (T::one() - alpha) * v[i] - xs;
                    }
                }
            }
            let mean = sum / w;
            acc.push(&(&mean * mean.transpose()));
        }
        acc
    };
    let parts: Vec<MatrixWelford<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads as u64)
            .map(|worker| {
                let per_chunk = &per_chunk;
                scope.spawn(move || {
                    (worker..MC_CHUNKS)
                        .step_by(threads)
                        .map(|chunk| (chunk, per_chunk(chunk)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(u64, MatrixWelford<T>)> =
            handles.into_iter().flat_map(|h| h.join().expect("simulation worker panicked")).collect();
        all.sort_by_key(|(chunk, _)| *chunk);
        all.into_iter().map(|(_, acc)| acc).collect()
    });
    let mut total = MatrixWelford::new(2 * d, 2 * d);
    for part in &parts {
        total.merge(part);
    }
    total
}

/// Named instances the suite runs on for a given dimension. Both keep `κκ̃`
/// in the low hundreds for `d ≤ 8`: the identity residuals grow with the
/// conditioning of `I − A` and `I − A⊗A`, and past `κκ̃ ≈ 400` double
/// precision no longer resolves them to the identity tolerance.
pub fn standard_instances(d: usize, sigma2: f64) -> Result<Vec<(String, ProblemInstance<f64>)>> {
    let weights: Vec<f64> = (1..=d).map(|i| (i + d) as f64).collect();
    let total: f64 = weights.iter().sum();
    let discrete = DistributionSpec::DiscreteOneHot { probabilities: weights.iter().map(|w| w / total).collect() };
    let gaussian = DistributionSpec::gaussian_log_spaced(d, 0.2, 1.0);
    let noise = NoiseModel::AdditiveGaussian { sigma2 };
    let x_star = DVector::zeros(d);
    Ok(vec![
        (format!("discrete_d{d}"), build_instance(discrete, noise, x_star.clone())?),
        (format!("gaussian_d{d}"), build_instance(gaussian, noise, x_star)?),
    ])
}

/// All deterministic checks on the standard instances of dimension `d`, keyed
/// by `check/instance`. Instances are checked in parallel; the map makes the
/// merged order independent of scheduling.
pub fn run_suite(d: usize, trials: usize, seed: u64) -> Result<BTreeMap<String, CheckReport>> {
    let instances = standard_instances(d, 1.0)?;
    let results: Vec<Result<Vec<(String, CheckReport)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = instances
            .iter()
            .map(|(label, inst)| {
                scope.spawn(move || -> Result<Vec<(String, CheckReport)>> {
                    let params = crate::model::derive_asgd_params(inst, None)?;
                    let ops = build_operator_set(inst, &params)?;
                    let reports = vec![
                        check_bias_contraction(&ops, trials, seed),
                        check_stationary_bound(&ops),
                        check_leading_variance(&ops),
                        check_matrix_identities(&ops, trials, seed),
                        check_second_moment(inst, &params),
                    ];
                    Ok(reports.into_iter().map(|r| (format!("{}/{label}", r.check), r)).collect())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("check worker panicked")).collect()
    });
    let mut merged = BTreeMap::new();
    for r in results {
        merged.extend(r?);
    }
    Ok(merged)
}

/// Names of failing reports, in key order.
pub fn failing_checks(suite: &BTreeMap<String, CheckReport>) -> Vec<String> {
    suite.iter().filter(|(_, r)| !r.passed()).map(|(k, _)| k.clone()).collect()
}

/// Symmetric PSD test matrix `WWᵀ` with Gaussian `W`.
pub fn random_psd<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<T> {
    let w = gaussian_matrix::<T, R>(rng, n);
    symmetrize(&(&w * w.transpose()))
}
