//! Streaming solvers: tail-averaged accelerated SGD and the plain SGD baseline,
//! plus evaluation of the accelerated method's risk bound.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{AsgdError, Result};
use crate::model::{AsgdParams, ProblemInstance};
use crate::oracle::{excess_risk, gradient_coefficient, rng_for, Sample, Sampler};
use crate::Scalar;

/// Iterate state shared by both solvers. SGD leaves `v` equal to `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T: Scalar> {
    pub x: DVector<T>,
    pub v: DVector<T>,
    /// `Σ_{k=t+1..j} x_k`.
    pub tail_sum: DVector<T>,
    pub step: usize,
    pub tail_start: usize,
}

impl<T: Scalar> SolverState<T> {
    fn new(x0: DVector<T>, v0: DVector<T>, tail_start: usize) -> Self {
        let d = x0.len();
        Self { x: x0, v: v0, tail_sum: DVector::zeros(d), step: 0, tail_start }
    }

    fn tail_len(&self) -> usize {
        self.step.saturating_sub(self.tail_start)
    }

    /// Mean of the iterates accumulated so far, or `None` before the tail.
    pub fn tail_average(&self) -> Option<DVector<T>> {
        let k = self.tail_len();
        (k > 0).then(|| &self.tail_sum / T::from_usize_lossy(k))
    }

    fn accumulate(&mut self) {
        self.step += 1;
        if self.step > self.tail_start {
            self.tail_sum += &self.x;
        }
    }
}

/// One-step driver for the accelerated recursion.
///
/// Per step, with a single stochastic gradient `g` at `y`:
/// `y = αx + (1−α)v`, `x⁺ = y − δg`, `v⁺ = βy + (1−β)v − γg`.
#[derive(Debug, Clone)]
pub struct AsgdStepper<T: Scalar> {
    params: AsgdParams<T>,
    sampler: Sampler<T>,
    sample: Sample<T>,
    y: DVector<T>,
    state: SolverState<T>,
    oracle_calls: u64,
}

impl<T: Scalar> AsgdStepper<T> {
    /// Starts from `x₀ = v₀`.
    pub fn new(instance: &ProblemInstance<T>, params: AsgdParams<T>, x0: DVector<T>, tail_start: usize) -> Self {
        let v0 = x0.clone();
        Self::with_momentum(instance, params, x0, v0, tail_start)
    }

    pub fn with_momentum(
        instance: &ProblemInstance<T>,
        params: AsgdParams<T>,
        x0: DVector<T>,
        v0: DVector<T>,
        tail_start: usize,
    ) -> Self {
        let d = instance.dim();
        Self {
            params,
            sampler: Sampler::new(instance),
            sample: Sample::zeros(d),
            y: DVector::zeros(d),
            state: SolverState::new(x0, v0, tail_start),
            oracle_calls: 0,
        }
    }

    /// Starts from given `(x₀, y₀)`, solving `y₀ = αx₀ + (1−α)v₀` for `v₀`.
    pub fn from_xy(
        instance: &ProblemInstance<T>,
        params: AsgdParams<T>,
        x0: DVector<T>,
        y0: &DVector<T>,
        tail_start: usize,
    ) -> Self {
        let a = params.alpha;
        let v0 = (y0 - &x0 * a) / (T::one() - a);
        Self::with_momentum(instance, params, x0, v0, tail_start)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let AsgdParams { alpha, beta, gamma, delta, .. } = self.params;
        let one = T::one();
        let st = &mut self.state;
        self.y.zip_zip_apply(&st.x, &st.v, |y, x, v| *y = alpha * x + (one - alpha) * v);
        self.sampler.draw_into(rng, &mut self.sample);
        self.oracle_calls += 1;
        let r = gradient_coefficient(&self.sample, &self.y);
        let a = &self.sample.a;
        for i in 0..self.y.len() {
            let g = r * a[i];
            let yi = self.y[i];
            st.x[i] = yi - delta * g;
            st.v[i] = beta * yi + (one - beta) * st.v[i] - gamma * g;
        }
        st.accumulate();
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    pub fn x(&self) -> &DVector<T> {
        &self.state.x
    }

    pub fn v(&self) -> &DVector<T> {
        &self.state.v
    }

    /// `y_j = α x_j + (1−α) v_j` for the current state.
    pub fn y(&self) -> DVector<T> {
        let a = self.params.alpha;
        &self.state.x * a + &self.state.v * (T::one() - a)
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }
}

/// One-step driver for plain SGD, `x⁺ = x − η ∇̂P(x)`.
#[derive(Debug, Clone)]
pub struct SgdStepper<T: Scalar> {
    step_size: T,
    sampler: Sampler<T>,
    sample: Sample<T>,
    state: SolverState<T>,
    oracle_calls: u64,
}

impl<T: Scalar> SgdStepper<T> {
    pub fn new(instance: &ProblemInstance<T>, step_size: T, x0: DVector<T>, tail_start: usize) -> Self {
        let d = instance.dim();
        let v0 = x0.clone();
        Self {
            step_size,
            sampler: Sampler::new(instance),
            sample: Sample::zeros(d),
            state: SolverState::new(x0, v0, tail_start),
            oracle_calls: 0,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.sampler.draw_into(rng, &mut self.sample);
        self.oracle_calls += 1;
        let r = gradient_coefficient(&self.sample, &self.state.x);
        self.state.x.axpy(-self.step_size * r, &self.sample.a, T::one());
        self.state.v.copy_from(&self.state.x);
        self.state.accumulate();
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    pub fn x(&self) -> &DVector<T> {
        &self.state.x
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    Asgd,
    Sgd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Asgd => "asgd",
            Self::Sgd => "sgd",
        }
    }
}

/// Which quantity a trace point measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// The current iterate `x_j` (before the tail starts).
    Iterate,
    /// The running tail average `(1/(j−t)) Σ_{k=t+1..j} x_k`.
    TailAverage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint<T> {
    pub step: usize,
    pub risk: T,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamsSnapshot<T> {
    Asgd(AsgdParams<T>),
    Sgd { step_size: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<T: Scalar> {
    pub solver: SolverKind,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub params: ParamsSnapshot<T>,
    /// `x̄_{t,n}`.
    pub tail_average: DVector<T>,
    /// Excess risk of `x̄_{t,n}`.
    pub tail_risk: T,
    pub final_iterate: DVector<T>,
    /// Starts at step 0; strictly increasing steps; always ends at step `n`.
    pub risk_trace: Vec<TracePoint<T>>,
    pub oracle_calls: u64,
}

/// `max(1, n / 1000)`.
pub fn default_trace_stride(n: usize) -> usize {
    (n / 1000).max(1)
}

fn check_horizon(n: usize, t: usize) -> Result<()> {
    if t >= n {
        Err(AsgdError::InvalidHorizon { t, n })
    } else {
        Ok(())
    }
}

fn check_start<T: Scalar>(instance: &ProblemInstance<T>, x0: &DVector<T>) -> Result<()> {
    if x0.len() != instance.dim() {
        return Err(AsgdError::DimensionMismatch { expected: instance.dim(), got: x0.len() });
    }
    Ok(())
}

fn trace_point<T: Scalar>(instance: &ProblemInstance<T>, state: &SolverState<T>) -> TracePoint<T> {
    match state.tail_average() {
        Some(avg) => TracePoint { step: state.step, risk: excess_risk(instance, &avg), kind: TraceKind::TailAverage },
        None => TracePoint { step: state.step, risk: excess_risk(instance, &state.x), kind: TraceKind::Iterate },
    }
}

struct Driven<T: Scalar> {
    state: SolverState<T>,
    trace: Vec<TracePoint<T>>,
    oracle_calls: u64,
}

fn finish<T: Scalar>(
    instance: &ProblemInstance<T>,
    solver: SolverKind,
    n: usize,
    t: usize,
    seed: u64,
    params: ParamsSnapshot<T>,
    run: Driven<T>,
) -> RunResult<T> {
    let tail_average = run.state.tail_average().expect("t < n leaves a nonempty tail");
    RunResult {
        solver,
        n,
        t,
        seed,
        params,
        tail_risk: excess_risk(instance, &tail_average),
        tail_average,
        final_iterate: run.state.x,
        risk_trace: run.trace,
        oracle_calls: run.oracle_calls,
    }
}

/// Tail-averaged ASGD from `x₀ = v₀ = 0`.
pub fn asgd_run<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    n: usize,
    t: usize,
    seed: u64,
    trace_stride: Option<usize>,
) -> Result<RunResult<T>> {
    asgd_run_from(instance, params, &DVector::zeros(instance.dim()), n, t, seed, trace_stride)
}

/// Tail-averaged ASGD from `x₀ = v₀` given.
pub fn asgd_run_from<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    x0: &DVector<T>,
    n: usize,
    t: usize,
    seed: u64,
    trace_stride: Option<usize>,
) -> Result<RunResult<T>> {
    check_horizon(n, t)?;
    check_start(instance, x0)?;
    params.validate()?;
    let stride = trace_stride.unwrap_or_else(|| default_trace_stride(n)).max(1);
    let mut rng = rng_for(seed, 0);
    let mut s = AsgdStepper::new(instance, *params, x0.clone(), t);
    let mut trace = vec![trace_point(instance, s.state())];
    for j in 1..=n {
        s.step(&mut rng);
        if j % stride == 0 || j == n {
            trace.push(trace_point(instance, s.state()));
        }
    }
    let run = Driven { oracle_calls: s.oracle_calls(), state: s.state, trace };
    Ok(finish(instance, SolverKind::Asgd, n, t, seed, ParamsSnapshot::Asgd(*params), run))
}

/// `1 / (2R²)`.
pub fn default_sgd_step<T: Scalar>(instance: &ProblemInstance<T>) -> T {
    T::one() / (T::lit(2.0) * instance.r2)
}

/// Tail-averaged SGD from `x₀ = 0`.
pub fn sgd_run<T: Scalar>(
    instance: &ProblemInstance<T>,
    step_size: T,
    n: usize,
    t: usize,
    seed: u64,
    trace_stride: Option<usize>,
) -> Result<RunResult<T>> {
    sgd_run_from(instance, step_size, &DVector::zeros(instance.dim()), n, t, seed, trace_stride)
}

pub fn sgd_run_from<T: Scalar>(
    instance: &ProblemInstance<T>,
    step_size: T,
    x0: &DVector<T>,
    n: usize,
    t: usize,
    seed: u64,
    trace_stride: Option<usize>,
) -> Result<RunResult<T>> {
    check_horizon(n, t)?;
    check_start(instance, x0)?;
    let scaled = step_size * instance.r2;
    if !(scaled > T::zero() && scaled < T::one()) {
        return Err(AsgdError::UnstableStep(scaled.to_f64_lossy()));
    }
    let stride = trace_stride.unwrap_or_else(|| default_trace_stride(n)).max(1);
    let mut rng = rng_for(seed, 0);
    let mut s = SgdStepper::new(instance, step_size, x0.clone(), t);
    let mut trace = vec![trace_point(instance, s.state())];
    for j in 1..=n {
        s.step(&mut rng);
        if j % stride == 0 || j == n {
            trace.push(trace_point(instance, s.state()));
        }
    }
    let run = Driven { oracle_calls: s.oracle_calls(), state: s.state, trace };
    Ok(finish(instance, SolverKind::Sgd, n, t, seed, ParamsSnapshot::Sgd { step_size }, run))
}

/// Individual terms of the accelerated method's excess-risk bound. Every
/// term except the leading variance carries the universal constant `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport<T> {
    pub universal_constant: T,
    pub initial_excess_risk: T,
    pub leading_bias: T,
    pub leading_variance: T,
    pub vanishing_bias: T,
    pub lower_order_variance: T,
    pub vanishing_variance: T,
    pub total: T,
}

/// Evaluates each displayed term of the bound for tail start `t` and
/// horizon `n`, given `P(x₀) − P(x*)` and the universal constant `C`.
pub fn theorem1_bound<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    n: usize,
    t: usize,
    initial_excess_risk: T,
    universal_constant: T,
) -> Result<BoundReport<T>> {
    check_horizon(n, t)?;
    params.validate()?;
    let lit = T::lit;
    let k = instance.kappa_product();
    let sk = k.sqrt();
    let d = T::from_usize_lossy(instance.dim());
    let s2 = instance.sigma2();
    let kappa = instance.kappa;
    let kt = instance.kappa_tilde;
    let nt = T::from_usize_lossy(n - t);
    let nf = T::from_usize_lossy(n);
    let tf = T::from_usize_lossy(t);
    let c = universal_constant;
    let p0 = initial_excess_risk;
    let decay_n = (-nf / (lit(9.0) * sk)).exp();

    let leading_bias = c * k.powf(lit(2.25)) * d * kappa / (nt * nt) * (-tf / (lit(9.0) * sk)).exp() * p0;
    let leading_variance = lit(5.0) * s2 * d / nt;
    let vanishing_bias = c * k.powf(lit(1.25)) * d * kappa * decay_n * p0;
    let lower_order_variance = c * s2 * d * sk / (nt * nt);
    let vanishing_variance = c
        * (decay_n * (s2 * d * k.powf(lit(1.75)) + s2 * d * k.powf(lit(3.5)) * kt / (nt * nt))
            + s2 * d / nt * k.powf(lit(2.75)) * (-(nt - T::one()) / (lit(30.0) * sk)).exp());
    Ok(BoundReport {
        universal_constant: c,
        initial_excess_risk: p0,
        leading_bias,
        leading_variance,
        vanishing_bias,
        lower_order_variance,
        vanishing_variance,
        total: leading_bias + leading_variance + vanishing_bias + lower_order_variance + vanishing_variance,
    })
}

/// `C exp(−n / (20√(κκ̃))) (P(x₀) − P(x*)) + 11 σ² d / n`, the simplified
/// bound for `t = ⌊n/2⌋`.
pub fn corollary1_bound<T: Scalar>(
    instance: &ProblemInstance<T>,
    n: usize,
    initial_excess_risk: T,
    universal_constant: T,
) -> T {
    let sk = instance.kappa_product().sqrt();
    let nf = T::from_usize_lossy(n.max(1));
    universal_constant * (-nf / (T::lit(20.0) * sk)).exp() * initial_excess_risk
        + T::lit(11.0) * instance.sigma2() * T::from_usize_lossy(instance.dim()) / nf
}
