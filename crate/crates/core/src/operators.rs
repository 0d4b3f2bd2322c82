//! Exact expected-operator engine for small dimensions.
//!
//! The centered state is `θ_j = (x_j − x*, y_j − x*) ∈ ℝ^{2d}`, driven by
//! `θ_j = Â_j θ_{j−1} + ζ_j`. Second moments are `2d × 2d` matrices; linear
//! maps on them are stored as dense `(2d)² × (2d)²` matrices acting on
//! column-major vectorizations.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{AsgdError, Result};
use crate::linalg::{
    apply_operator, block2, frobenius_inner, operator_matrix, spectral_radius, symmetrize,
    unvectorize, vectorize,
};
use crate::model::{AsgdParams, ProblemInstance};
use crate::Scalar;

pub const DEFAULT_DIM_LIMIT: usize = 8;

/// Expected operators of the accelerated recursion for one instance.
#[derive(Debug, Clone)]
pub struct OperatorSet<T: Scalar> {
    pub instance: ProblemInstance<T>,
    pub params: AsgdParams<T>,
    /// `E[Â] = [[0, I−δH], [−cI, (1+c)I − ĝH]]`.
    pub a: DMatrix<T>,
    /// `[[0, I], [−cI, (1+c)I]]`.
    pub v1: DMatrix<T>,
    /// `[[0, −δH], [0, −ĝH]]`.
    pub v2: DMatrix<T>,
    /// `S ↦ E[Â S Âᵀ]`.
    pub b_mat: DMatrix<T>,
    /// `S ↦ A S Aᵀ`.
    pub d_mat: DMatrix<T>,
    /// `S ↦ uuᵀ ⊗ (M(S₂₂) − H S₂₂ H)` with `u = (δ, ĝ)`.
    pub r_mat: DMatrix<T>,
    /// `σ² uuᵀ ⊗ H`.
    pub sigma_hat: DMatrix<T>,
    pub p_mat: DMatrix<T>,
    pub z_mat: DMatrix<T>,
    /// `Pᵀ Z P`.
    pub g: DMatrix<T>,
    pub rho_a: T,
    pub rho_b: T,
}

pub fn build_operator_set<T: Scalar>(instance: &ProblemInstance<T>, params: &AsgdParams<T>) -> Result<OperatorSet<T>> {
    build_operator_set_with_limit(instance, params, DEFAULT_DIM_LIMIT)
}

pub fn build_operator_set_with_limit<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &AsgdParams<T>,
    limit: usize,
) -> Result<OperatorSet<T>> {
    let d = instance.dim();
    if d > limit {
        return Err(AsgdError::DimensionTooLarge { d, limit });
    }
    params.validate()?;
    let m = 2 * d;
    let one = T::one();
    let AsgdParams { alpha, delta, c, g_hat, .. } = *params;
    let eye = DMatrix::<T>::identity(d, d);
    let zero = DMatrix::<T>::zeros(d, d);
    let h = instance.h();

    let v1 = block2(&zero, &eye, &(&eye * -c), &(&eye * (one + c)));
    let v2 = block2(&zero, &(&h * -delta), &zero, &(&h * -g_hat));
    let a = &v1 + &v2;

    let uu = DMatrix::from_row_slice(2, 2, &[delta * delta, delta * g_hat, delta * g_hat, g_hat * g_hat]);
    let b_map = |s: &DMatrix<T>| expected_map(instance, &v1, &v2, &uu, s);
    let b_mat = operator_matrix(m, b_map);
    let d_mat = a.kronecker(&a);
    let r_mat = operator_matrix(m, |s: &DMatrix<T>| {
        let s22 = s.view((d, d), (d, d)).clone_owned();
        let fluct = instance.fourth_moment(&s22) - &h * &s22 * &h;
        uu.kronecker(&fluct)
    });
    let sigma_hat = uu.kronecker(&h) * instance.sigma2();

    let p_mat = block2(&eye, &zero, &(&eye * (-alpha / (one - alpha))), &(&eye * (one / (one - alpha))));
    let z_mat = block2(&eye, &zero, &zero, &(instance.h_inv() * instance.mu));
    let g = symmetrize(&(p_mat.transpose() * &z_mat * &p_mat));

    let rho_a = spectral_radius(&a);
    let rho_b = spectral_radius(&b_mat);
    Ok(OperatorSet {
        instance: instance.clone(),
        params: *params,
        a,
        v1,
        v2,
        b_mat,
        d_mat,
        r_mat,
        sigma_hat,
        p_mat,
        z_mat,
        g,
        rho_a,
        rho_b,
    })
}

/// `V₁SV₁ᵀ + V₁SV₂ᵀ + V₂SV₁ᵀ + uuᵀ ⊗ M(S₂₂)`.
fn expected_map<T: Scalar>(
    instance: &ProblemInstance<T>,
    v1: &DMatrix<T>,
    v2: &DMatrix<T>,
    uu: &DMatrix<T>,
    s: &DMatrix<T>,
) -> DMatrix<T> {
    let d = instance.dim();
    let v1s = v1 * s;
    let s22 = s.view((d, d), (d, d)).clone_owned();
    &v1s * v1.transpose() + &v1s * v2.transpose() + v2 * s * v1.transpose() + uu.kronecker(&instance.fourth_moment(&s22))
}

impl<T: Scalar> OperatorSet<T> {
    pub fn dim(&self) -> usize {
        self.instance.dim()
    }

    /// `𝔅(S)` evaluated directly from its definition, bypassing `b_mat`.
    pub fn apply_b_direct(&self, s: &DMatrix<T>) -> DMatrix<T> {
        let p = &self.params;
        let uu = DMatrix::from_row_slice(
            2,
            2,
            &[p.delta * p.delta, p.delta * p.g_hat, p.delta * p.g_hat, p.g_hat * p.g_hat],
        );
        expected_map(&self.instance, &self.v1, &self.v2, &uu, s)
    }

    pub fn apply_b(&self, s: &DMatrix<T>) -> DMatrix<T> {
        apply_operator(&self.b_mat, s)
    }

    /// `[[H, 0], [0, 0]]`.
    pub fn h_block(&self) -> DMatrix<T> {
        let d = self.dim();
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        out.view_mut((0, 0), (d, d)).copy_from(&self.instance.h());
        out
    }

    /// Generalization error `½ ⟨[[H, 0], [0, 0]], Φ⟩` of a second moment `Φ`.
    pub fn risk_of(&self, phi: &DMatrix<T>) -> T {
        let d = self.dim();
        let mut acc = T::zero();
        for i in 0..d {
            acc += self.instance.h_diag[i] * phi[(i, i)];
        }
        acc * T::lit(0.5)
    }

    fn i_minus_a(&self) -> Result<LU<T, Dyn, Dyn>> {
        let m = self.a.nrows();
        let lu = (DMatrix::identity(m, m) - &self.a).lu();
        if !lu.is_invertible() {
            return Err(AsgdError::Singular("I - A".into()));
        }
        Ok(lu)
    }

    fn i_minus_b(&self) -> Result<LU<T, Dyn, Dyn>> {
        self.require_contractive_b()?;
        let n = self.b_mat.nrows();
        let lu = (DMatrix::identity(n, n) - &self.b_mat).lu();
        if !lu.is_invertible() {
            return Err(AsgdError::Singular("I - B".into()));
        }
        Ok(lu)
    }

    fn require_contractive_a(&self) -> Result<()> {
        if self.rho_a < T::one() {
            Ok(())
        } else {
            Err(AsgdError::NonContractive { what: "A", radius: self.rho_a.to_f64_lossy() })
        }
    }

    fn require_contractive_b(&self) -> Result<()> {
        if self.rho_b < T::one() {
            Ok(())
        } else {
            Err(AsgdError::NonContractive { what: "B", radius: self.rho_b.to_f64_lossy() })
        }
    }

    /// `(I − A)⁻¹ S`.
    pub fn left_resolvent(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.i_minus_a()?.solve(s).expect("invertible"))
    }

    /// `S (I − Aᵀ)⁻¹`.
    pub fn right_resolvent(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.left_resolvent(&s.transpose())?.transpose())
    }

    /// `(I − 𝔅)⁻¹ S`.
    pub fn b_resolvent(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        let v = self.i_minus_b()?.solve(&vectorize(s)).expect("invertible");
        Ok(unvectorize(&v, s.nrows()))
    }

    /// `S + (I − A)⁻¹ A S + S Aᵀ (I − Aᵀ)⁻¹`, the weighting that turns a sum
    /// of per-step second moments into the second moment of their average.
    pub fn averaging_weight(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        let left = self.left_resolvent(&(&self.a * s))?;
        let right = self.right_resolvent(&(s * self.a.transpose()))?;
        Ok(s + left + right)
    }

    /// Runs `ψ_j = 𝔅^j start` for `j = t+1..=n` and returns
    /// `(𝔅^{t+1} start, 𝔅^{n+1} start, Σ_j A^{n+1−j} ψ_j)`.
    fn propagate(&self, start: &DMatrix<T>, t: usize, n: usize) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let m = start.nrows();
        let mut psi = vectorize(start);
        for _ in 0..=t {
            psi = &self.b_mat * psi;
        }
        let first = unvectorize(&psi, m);
        let mut horner = DMatrix::zeros(m, m);
        for j in (t + 1)..=n {
            if j > t + 1 {
                psi = &self.b_mat * psi;
            }
            horner = &self.a * (horner + unvectorize(&psi, m));
        }
        psi = &self.b_mat * psi;
        (first, unvectorize(&psi, m), horner)
    }
}

/// Exact second moments of the tail-averaged centered iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePrediction<T: Scalar> {
    /// `E[θ̄^bias ⊗ θ̄^bias]`.
    pub bias: DMatrix<T>,
    /// `E[θ̄^variance ⊗ θ̄^variance]`.
    pub variance: DMatrix<T>,
    /// `bias + variance`, the full second moment under additive noise.
    pub total: DMatrix<T>,
    /// The `1/(n−t)` term of the variance part alone.
    pub variance_leading: DMatrix<T>,
    pub bias_risk: T,
    pub variance_risk: T,
    pub total_risk: T,
}

fn check_window(t: usize, n: usize) -> Result<()> {
    if t >= n {
        Err(AsgdError::InvalidHorizon { t, n })
    } else {
        Ok(())
    }
}

fn check_theta<T: Scalar>(ops: &OperatorSet<T>, theta0: &DVector<T>) -> Result<()> {
    let m = 2 * ops.dim();
    if theta0.len() != m {
        return Err(AsgdError::DimensionMismatch { expected: m, got: theta0.len() });
    }
    Ok(())
}

/// Bias and variance second moments of `θ̄_{t,n}` from the closed operator
/// expressions: resolvents by linear solves, `j`-sums evaluated term by term.
pub fn predict_tail_covariance<T: Scalar>(
    ops: &OperatorSet<T>,
    theta0: &DVector<T>,
    t: usize,
    n: usize,
) -> Result<CovariancePrediction<T>> {
    check_window(t, n)?;
    check_theta(ops, theta0)?;
    ops.require_contractive_a()?;
    ops.require_contractive_b()?;
    let m = 2 * ops.dim();
    let w = T::from_usize_lossy(n - t);
    let w2 = w * w;

    let phi0 = theta0 * theta0.transpose();
    let (b_first, b_last, b_horner) = ops.propagate(&phi0, t, n);
    let b_sum = ops.b_resolvent(&(b_first - b_last))?;
    let b_cross = ops.left_resolvent(&b_horner)?;
    let bias = symmetrize(&((ops.averaging_weight(&b_sum)? - &b_cross - b_cross.transpose()) / w2));

    let phi_inf = ops.b_resolvent(&ops.sigma_hat)?;
    let leading = ops.averaging_weight(&phi_inf)? / w;
    let a_pow = ops.a.pow((n + 1 - t) as u32);
    let geo = ops.left_resolvent(&ops.left_resolvent(&((&ops.a - a_pow) * &phi_inf))?)?;
    let (v_first, v_last, v_horner) = ops.propagate(&phi_inf, t, n);
    let v_sum = ops.b_resolvent(&(v_first - v_last))?;
    let v_cross = ops.left_resolvent(&v_horner)?;
    let variance = &leading
        - (&geo + geo.transpose()) / w2
        - ops.averaging_weight(&v_sum)? / w2
        + (&v_cross + v_cross.transpose()) / w2;
    let variance = symmetrize(&variance);
    debug_assert_eq!(variance.nrows(), m);

    Ok(finish_prediction(ops, bias, variance, symmetrize(&leading)))
}

fn finish_prediction<T: Scalar>(
    ops: &OperatorSet<T>,
    bias: DMatrix<T>,
    variance: DMatrix<T>,
    variance_leading: DMatrix<T>,
) -> CovariancePrediction<T> {
    let total = &bias + &variance;
    CovariancePrediction {
        bias_risk: ops.risk_of(&bias),
        variance_risk: ops.risk_of(&variance),
        total_risk: ops.risk_of(&total),
        bias,
        variance,
        total,
        variance_leading,
    }
}

/// Same quantity as [`predict_tail_covariance`] by direct summation of
/// `E[θ_i θ_jᵀ]` over the window; used as an independent cross-check.
pub fn predict_tail_covariance_by_summation<T: Scalar>(
    ops: &OperatorSet<T>,
    theta0: &DVector<T>,
    t: usize,
    n: usize,
) -> Result<CovariancePrediction<T>> {
    check_window(t, n)?;
    check_theta(ops, theta0)?;
    let m = 2 * ops.dim();
    let w2 = T::from_usize_lossy(n - t).powi(2);
    let sum_window = |start: &DMatrix<T>, forcing: &DMatrix<T>| -> Result<DMatrix<T>> {
        let mut phi = start.clone();
        let mut total = DMatrix::zeros(m, m);
        let mut horner = DMatrix::zeros(m, m);
        for j in 1..=n {
            phi = ops.apply_b(&phi) + forcing;
            if j > t {
                total += &phi;
                horner = &ops.a * (horner + &phi);
            }
        }
        let x = ops.left_resolvent(&(&ops.a * &total - horner))?;
        Ok(symmetrize(&((&total + &x + x.transpose()) / w2)))
    };
    let zero = DMatrix::zeros(m, m);
    let bias = sum_window(&(theta0 * theta0.transpose()), &zero)?;
    let variance = sum_window(&zero, &ops.sigma_hat)?;
    let leading = match ops.b_resolvent(&ops.sigma_hat) {
        Ok(phi_inf) => symmetrize(&(ops.averaging_weight(&phi_inf)? / T::from_usize_lossy(n - t))),
        Err(_) => zero.clone(),
    };
    Ok(finish_prediction(ops, bias, variance, leading))
}

/// Generalization-error split of the tail average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVarianceSplit<T> {
    pub bias_risk: T,
    pub variance_risk: T,
    /// Exact risk `bias + variance` (cross terms vanish for additive noise).
    pub total_risk: T,
    /// `2 (bias + variance)`, the generic decomposition bound.
    pub total_bound: T,
}

pub fn bias_variance_decompose<T: Scalar>(
    ops: &OperatorSet<T>,
    theta0: &DVector<T>,
    t: usize,
    n: usize,
) -> Result<BiasVarianceSplit<T>> {
    let p = predict_tail_covariance(ops, theta0, t, n)?;
    Ok(BiasVarianceSplit {
        bias_risk: p.bias_risk,
        variance_risk: p.variance_risk,
        total_risk: p.total_risk,
        total_bound: T::lit(2.0) * (p.bias_risk + p.variance_risk),
    })
}

/// `φ∞ = (I − 𝔅)⁻¹ Σ̂`, symmetrized.
pub fn stationary_covariance<T: Scalar>(ops: &OperatorSet<T>) -> Result<DMatrix<T>> {
    Ok(symmetrize(&ops.b_resolvent(&ops.sigma_hat)?))
}

/// Per-direction entries of the second-moment-only stationary matrix `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct USecondMoment<T> {
    pub u11: T,
    pub u12: T,
    pub u22: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UBlocks<T: Scalar> {
    pub lambdas: Vec<T>,
    /// From the 2×2 linear solve.
    pub direct: Vec<USecondMoment<T>>,
    /// From the closed-form expressions.
    pub closed_form: Vec<USecondMoment<T>>,
}

impl<T: Scalar> UBlocks<T> {
    /// `[[diag(u11), diag(u12)], [diag(u12), diag(u22)]]` from the direct solve.
    pub fn assemble(&self) -> DMatrix<T> {
        let d = self.direct.len();
        let diag = |f: fn(&USecondMoment<T>) -> T| DMatrix::from_diagonal(&DVector::from_iterator(d, self.direct.iter().map(f)));
        let u12 = diag(|u| u.u12);
        block2(&diag(|u| u.u11), &u12, &u12, &diag(|u| u.u22))
    }

    pub fn u22_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.direct.len(), self.direct.iter().map(|u| u.u22)))
    }
}

/// Solves `(I − V₁⊗V₁ − V₁⊗V₂ − V₂⊗V₁) U = uuᵀ ⊗ H` one eigendirection at a time.
pub fn solve_second_moment_u<T: Scalar>(instance: &ProblemInstance<T>, params: &AsgdParams<T>) -> Result<UBlocks<T>> {
    let AsgdParams { delta: dl, c, g_hat: g, .. } = *params;
    let (one, two) = (T::one(), T::lit(2.0));
    let mut direct = Vec::with_capacity(instance.dim());
    let mut closed = Vec::with_capacity(instance.dim());
    for (j, &l) in instance.h_diag.iter().enumerate() {
        // Equations for (u12, u22); u11 follows from the first block row.
        let a11 = one + c * (one - dl * l);
        let a12 = g * l - (one + c) * (one - dl * l);
        let b1 = dl * g * l;
        let a21 = two * c * (one + c - g * l);
        let a22 = two * ((one + c) * (g * l - c) + dl * l * c * c);
        let b2 = (g * g + c * c * dl * dl) * l;
        let det = a11 * a22 - a12 * a21;
        let scale = (a11 * a22).abs() + (a12 * a21).abs();
        if !(det.abs() > scale * T::default_epsilon() * T::lit(16.0)) {
            return Err(AsgdError::Singular(format!("second-moment system in direction {j}")));
        }
        let u12 = (b1 * a22 - a12 * b2) / det;
        let u22 = (a11 * b2 - a21 * b1) / det;
        let u11 = u22 * (one - two * dl * l) + dl * dl * l;
        direct.push(USecondMoment { u11, u12, u22 });

        let den = two * (one - c * c + c * l * (g + c * dl));
        if !(den > T::zero()) {
            return Err(AsgdError::Singular(format!("closed-form denominator in direction {j}")));
        }
        let gap = g - c * dl;
        let u22c = ((one + c - c * dl * l) * gap + two * c * g * dl * l) / den;
        let u12c = ((one + c - l * (g + c * dl)) * gap + dl * l * (g + c * dl)) / den;
        let u11c = ((one + c - c * dl * l) * gap - two * dl * l * gap + two * dl * dl * l) / den;
        closed.push(USecondMoment { u11: u11c, u12: u12c, u22: u22c });
    }
    Ok(UBlocks { lambdas: instance.h_diag.iter().copied().collect(), direct, closed_form: closed })
}

/// `⟨[[H, 0], [0, 0]], S⟩` without the factor ½.
pub fn h_block_inner<T: Scalar>(ops: &OperatorSet<T>, s: &DMatrix<T>) -> T {
    frobenius_inner(&ops.h_block(), s)
}
