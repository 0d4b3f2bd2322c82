//! Problem instances and step-size parameters.
//!
//! The second-moment matrix `H` is always diagonal; the distribution kinds
//! below admit closed forms for `μ`, `R²`, `κ`, `κ̃` and the fourth-moment map
//! `M(S) = E[(aᵀ S a) a aᵀ]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{AsgdError, Result};
use crate::Scalar;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec<T> {
    /// `a = e_i` with probability `p_i`.
    DiscreteOneHot { probabilities: Vec<T> },
    /// `a ~ N(0, diag(eigenvalues))`.
    Gaussian { eigenvalues: Vec<T> },
}

impl<T: Scalar> DistributionSpec<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::DiscreteOneHot { probabilities } => probabilities.len(),
            Self::Gaussian { eigenvalues } => eigenvalues.len(),
        }
    }

    pub fn uniform_discrete(d: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(d);
        Self::DiscreteOneHot { probabilities: vec![p; d] }
    }

    /// Gaussian with `d` eigenvalues log-spaced from `hi` down to `lo`.
    pub fn gaussian_log_spaced(d: usize, lo: T, hi: T) -> Self {
        let eigenvalues = if d == 1 {
            vec![hi]
        } else {
            let (llo, lhi) = (lo.ln(), hi.ln());
            let step = (lhi - llo) / T::from_usize_lossy(d - 1);
            (0..d).map(|i| (lhi - step * T::from_usize_lossy(i)).exp()).collect()
        };
        Self::Gaussian { eigenvalues }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AsgdError::InvalidDistribution(msg));
        match self {
            Self::DiscreteOneHot { probabilities } => {
                if probabilities.is_empty() {
                    return bad("probabilities must be nonempty".into());
                }
                if let Some((i, p)) = probabilities
                    .iter()
                    .enumerate()
                    .find(|(_, p)| !(p.is_finite() && **p > T::zero()))
                {
                    return bad(format!("probability p[{i}] = {} is not strictly positive", p.to_f64_lossy()));
                }
                let total = probabilities.iter().fold(T::zero(), |a, p| a + *p).to_f64_lossy();
                let tol = NORMALIZATION_TOL
                    .max(T::default_epsilon().to_f64_lossy() * 4.0 * probabilities.len() as f64);
                if (total - 1.0).abs() > tol {
                    return bad(format!("probabilities sum to {total}, not 1"));
                }
            }
            Self::Gaussian { eigenvalues } => {
                if eigenvalues.is_empty() {
                    return bad("eigenvalues must be nonempty".into());
                }
                if let Some((i, l)) = eigenvalues
                    .iter()
                    .enumerate()
                    .find(|(_, l)| !(l.is_finite() && **l > T::zero()))
                {
                    return bad(format!(
                        "eigenvalue {i} = {} is not strictly positive (H must be positive definite)",
                        l.to_f64_lossy()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel<T> {
    Noiseless,
    /// `b = ⟨a, x*⟩ + ε`, `ε ~ N(0, σ²)` independent of `a`.
    AdditiveGaussian { sigma2: T },
}

impl<T: Scalar> NoiseModel<T> {
    pub fn sigma2(&self) -> T {
        match self {
            Self::Noiseless => T::zero(),
            Self::AdditiveGaussian { sigma2 } => *sigma2,
        }
    }
}

/// A synthetic least-squares problem with its spectral quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance<T: Scalar> {
    pub dist: DistributionSpec<T>,
    pub noise: NoiseModel<T>,
    pub x_star: DVector<T>,
    /// Diagonal of `H = E[a aᵀ]`.
    pub h_diag: DVector<T>,
    pub mu: T,
    pub r2: T,
    pub kappa: T,
    pub kappa_tilde: T,
}

pub fn build_instance<T: Scalar>(
    dist: DistributionSpec<T>,
    noise: NoiseModel<T>,
    x_star: DVector<T>,
) -> Result<ProblemInstance<T>> {
    dist.validate()?;
    let d = dist.dim();
    if x_star.len() != d {
        return Err(AsgdError::DimensionMismatch { expected: d, got: x_star.len() });
    }
    if let NoiseModel::AdditiveGaussian { sigma2 } = noise {
        if !(sigma2.is_finite() && sigma2 >= T::zero()) {
            return Err(AsgdError::InvalidNoise(format!(
                "sigma2 = {} must be finite and nonnegative",
                sigma2.to_f64_lossy()
            )));
        }
    }
    let (h_diag, r2, kappa_tilde) = match &dist {
        DistributionSpec::DiscreteOneHot { probabilities } => {
            let h = DVector::from_column_slice(probabilities);
            let mu = h.min();
            (h, T::one(), T::one() / mu)
        }
        DistributionSpec::Gaussian { eigenvalues } => {
            let h = DVector::from_column_slice(eigenvalues);
            let r2 = h.sum() + T::lit(2.0) * h.max();
            (h, r2, T::from_usize_lossy(d + 2))
        }
    };
    let mu = h_diag.min();
    let kappa = match &dist {
        // Exactly 1/min p, not 1/min p computed through r2 = 1.
        DistributionSpec::DiscreteOneHot { .. } => kappa_tilde,
        DistributionSpec::Gaussian { .. } => r2 / mu,
    };
    Ok(ProblemInstance { dist, noise, x_star, h_diag, mu, r2, kappa, kappa_tilde })
}

impl<T: Scalar> ProblemInstance<T> {
    pub fn dim(&self) -> usize {
        self.h_diag.len()
    }

    pub fn sigma2(&self) -> T {
        self.noise.sigma2()
    }

    pub fn h(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.h_diag)
    }

    pub fn h_inv(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.h_diag.map(|h| T::one() / h))
    }

    pub fn lambda_max(&self) -> T {
        self.h_diag.max()
    }

    /// `κ κ̃`, the quantity whose square root sets the accelerated rate.
    pub fn kappa_product(&self) -> T {
        self.kappa * self.kappa_tilde
    }

    /// Fourth-moment map `M(S) = E[(aᵀ S a) a aᵀ]` for an arbitrary square `S`.
    pub fn fourth_moment(&self, s: &DMatrix<T>) -> DMatrix<T> {
        let d = self.dim();
        match &self.dist {
            DistributionSpec::DiscreteOneHot { .. } => {
                DMatrix::from_fn(d, d, |i, j| if i == j { self.h_diag[i] * s[(i, i)] } else { T::zero() })
            }
            DistributionSpec::Gaussian { .. } => {
                let tr = (0..d).fold(T::zero(), |acc, i| acc + s[(i, i)] * self.h_diag[i]);
                DMatrix::from_fn(d, d, |i, j| {
                    let hi = self.h_diag[i];
                    let hj = self.h_diag[j];
                    let diag = if i == j { tr * hi } else { T::zero() };
                    diag + hi * (s[(i, j)] + s[(j, i)]) * hj
                })
            }
        }
    }
}

/// Constants `c₁..c₄` of the generalized step-size family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamConstants<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
}

impl<T: Scalar> ParamConstants<T> {
    /// `c₁ = 1/5, c₂ = √5/9, c₃ = √5/3, c₄ = 1/9`.
    pub fn theorem1() -> Self {
        let sqrt5 = T::lit(5.0).sqrt();
        Self {
            c1: T::lit(0.2),
            c2: sqrt5 / T::lit(9.0),
            c3: sqrt5 / T::lit(3.0),
            c4: T::one() / T::lit(9.0),
        }
    }

    /// Solves the equality constraints for `c₂` and `c₃` given `c₁`, `c₄`.
    pub fn from_c1_c4(c1: T, c4: T) -> Result<Self> {
        let two = T::lit(2.0);
        let c2 = (c4 / (two - c1)).sqrt();
        let c3 = c2 * (two * c1 - c1 * c1).sqrt() / c1;
        let k = Self { c1, c2, c3, c4 };
        k.validate()?;
        Ok(k)
    }

    /// `c₂ √(2c₁ − c₁²)`, the factor shared by `α`, `β` and `γ`.
    pub fn rate_factor(&self) -> T {
        self.c2 * (T::lit(2.0) * self.c1 - self.c1 * self.c1).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AsgdError::InvalidConstants(msg));
        let Self { c1, c2, c3, c4 } = *self;
        let f = |v: T| v.to_f64_lossy();
        if !(c1 > T::zero() && c1 < T::lit(0.5)) {
            return bad(format!("c1 = {} must lie in (0, 1/2)", f(c1)));
        }
        if !(c4 > T::zero() && c4 < T::one() / T::lit(6.0)) {
            return bad(format!("c4 = {} must lie in (0, 1/6)", f(c4)));
        }
        if !(c2 > T::zero() && c3 > T::zero()) {
            return bad("c2 and c3 must be positive".into());
        }
        let tol = T::default_epsilon() * T::lit(64.0);
        let c2_sq = c4 / (T::lit(2.0) - c1);
        if ((c2 * c2 - c2_sq) / c2_sq).abs() > tol {
            return bad(format!("c2^2 = {} but c4/(2-c1) = {}", f(c2 * c2), f(c2_sq)));
        }
        let c3_req = self.rate_factor() / c1;
        if ((c3 - c3_req) / c3_req).abs() > tol {
            return bad(format!("c3 = {} but c2*sqrt(2c1-c1^2)/c1 = {}", f(c3), f(c3_req)));
        }
        Ok(())
    }
}

/// Step sizes of the accelerated method, with derived `c = α(1−β)` and
/// `ĝ = αδ + (1−α)γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsgdParams<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub delta: T,
    pub c: T,
    pub g_hat: T,
    /// Present when the parameters came from the generalized family.
    pub constants: Option<ParamConstants<T>>,
}

impl<T: Scalar> AsgdParams<T> {
    /// Builds parameters from raw step sizes, checking the stability invariants.
    pub fn from_raw(alpha: T, beta: T, gamma: T, delta: T) -> Result<Self> {
        let c = alpha * (T::one() - beta);
        let g_hat = alpha * delta + (T::one() - alpha) * gamma;
        let p = Self { alpha, beta, gamma, delta, c, g_hat, constants: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(AsgdError::InvalidParams(msg.to_string()));
        let (z, o) = (T::zero(), T::one());
        if !(self.alpha > z && self.alpha < o) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta > z && self.beta < o) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.gamma > z && self.delta > z) {
            return bad("gamma and delta must be positive");
        }
        if !(self.g_hat > self.c * self.delta) {
            return bad("g_hat must exceed c * delta");
        }
        Ok(())
    }

    /// `ĝ − cδ`, the per-eigenvalue scale of `det(I − A)`.
    pub fn det_gap(&self) -> T {
        self.g_hat - self.c * self.delta
    }
}

/// Step sizes from the generalized family; `None` selects the default
/// constants.
pub fn derive_asgd_params<T: Scalar>(
    instance: &ProblemInstance<T>,
    constants: Option<ParamConstants<T>>,
) -> Result<AsgdParams<T>> {
    let k = constants.unwrap_or_else(ParamConstants::theorem1);
    k.validate()?;
    let sqrt_k = instance.kappa_product().sqrt();
    let s = k.rate_factor();
    let alpha = sqrt_k / (s + sqrt_k);
    let beta = k.c3 * s / sqrt_k;
    let gamma = s / (instance.mu * sqrt_k);
    let delta = k.c1 / instance.r2;
    let mut p = AsgdParams::from_raw(alpha, beta, gamma, delta)?;
    p.constants = Some(k);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn discrete(p: &[f64]) -> ProblemInstance<f64> {
        build_instance(
            DistributionSpec::DiscreteOneHot { probabilities: p.to_vec() },
            NoiseModel::Noiseless,
            DVector::zeros(p.len()),
        )
        .unwrap()
    }

    fn gaussian(l: &[f64]) -> ProblemInstance<f64> {
        build_instance(
            DistributionSpec::Gaussian { eigenvalues: l.to_vec() },
            NoiseModel::Noiseless,
            DVector::zeros(l.len()),
        )
        .unwrap()
    }

    #[test]
    fn discrete_condition_numbers() {
        let inst = discrete(&[0.4, 0.3, 0.2, 0.1]);
        assert!((inst.kappa - 10.0).abs() <= 1e-12);
        assert!((inst.kappa_tilde - 10.0).abs() <= 1e-12);
        assert_eq!(inst.mu, 0.1);
        assert_eq!(inst.r2, 1.0);
    }

    #[test]
    fn gaussian_condition_numbers() {
        let iso = gaussian(&[1.0; 4]);
        assert_eq!((iso.mu, iso.r2, iso.kappa, iso.kappa_tilde), (1.0, 6.0, 6.0, 6.0));
        let skew = gaussian(&[1.0, 0.01]);
        assert_eq!(skew.mu, 0.01);
        assert_relative_eq!(skew.r2, 3.01, max_relative = 1e-15);
        assert_relative_eq!(skew.kappa, 301.0, max_relative = 1e-13);
        assert_eq!(skew.kappa_tilde, 4.0);
    }

    #[test]
    fn rejects_bad_distributions() {
        let unnormalized = build_instance(
            DistributionSpec::DiscreteOneHot { probabilities: vec![0.5, 0.6] },
            NoiseModel::<f64>::Noiseless,
            DVector::zeros(2),
        );
        assert!(matches!(unnormalized, Err(AsgdError::InvalidDistribution(m)) if m.contains("sum")));
        let zero_p = build_instance(
            DistributionSpec::DiscreteOneHot { probabilities: vec![1.0, 0.0] },
            NoiseModel::<f64>::Noiseless,
            DVector::zeros(2),
        );
        assert!(matches!(zero_p, Err(AsgdError::InvalidDistribution(m)) if m.contains("p[1]")));
        let not_pd = build_instance(
            DistributionSpec::Gaussian { eigenvalues: vec![1.0, -0.1] },
            NoiseModel::<f64>::Noiseless,
            DVector::zeros(2),
        );
        assert!(matches!(not_pd, Err(AsgdError::InvalidDistribution(m)) if m.contains("positive definite")));
        let wrong_dim = build_instance(
            DistributionSpec::Gaussian { eigenvalues: vec![1.0] },
            NoiseModel::<f64>::Noiseless,
            DVector::zeros(2),
        );
        assert!(matches!(wrong_dim, Err(AsgdError::DimensionMismatch { .. })));
        let neg_noise = build_instance(
            DistributionSpec::Gaussian { eigenvalues: vec![1.0] },
            NoiseModel::AdditiveGaussian { sigma2: -1.0 },
            DVector::zeros(1),
        );
        assert!(matches!(neg_noise, Err(AsgdError::InvalidNoise(_))));
    }

    #[test]
    fn unit_instance_params() {
        let p = derive_asgd_params(&discrete(&[1.0]), None).unwrap();
        assert_relative_eq!(p.alpha, 0.870_268_092_443_196_2, max_relative = 1e-13);
        assert_relative_eq!(p.beta, 1.0 / 9.0, max_relative = 1e-14);
        assert_relative_eq!(p.gamma, 0.149_071_198_499_985_98, max_relative = 1e-13);
        assert_relative_eq!(p.delta, 0.2, max_relative = 1e-15);
    }

    #[test]
    fn four_point_params() {
        let p = derive_asgd_params(&discrete(&[0.4, 0.3, 0.2, 0.1]), None).unwrap();
        assert_relative_eq!(p.beta, 1.0 / 90.0, max_relative = 1e-14);
        assert_relative_eq!(p.delta, 0.2, max_relative = 1e-15);
        assert_relative_eq!(p.gamma, 0.149_071_198_499_985_98, max_relative = 1e-13);
        assert_relative_eq!(p.alpha, 0.985_311_838_336_298_4, max_relative = 1e-13);
    }

    #[test]
    fn generalized_family_matches_displayed_formulas() {
        for inst in [discrete(&[0.4, 0.3, 0.2, 0.1]), gaussian(&[1.0, 0.3, 0.02]), gaussian(&[2.0])] {
            let p = derive_asgd_params(&inst, None).unwrap();
            let sk = inst.kappa_product().sqrt();
            let a = 3.0 * 5f64.sqrt() * sk;
            assert_relative_eq!(p.alpha, a / (1.0 + a), max_relative = 1e-14);
            assert_relative_eq!(p.beta, 1.0 / (9.0 * sk), max_relative = 1e-14);
            assert_relative_eq!(p.gamma, 1.0 / (3.0 * 5f64.sqrt() * inst.mu * sk), max_relative = 1e-14);
            assert_relative_eq!(p.delta, 1.0 / (5.0 * inst.r2), max_relative = 1e-15);
            assert_relative_eq!(p.beta * 9.0 * sk, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn explicit_default_constants_are_bit_identical() {
        let inst = gaussian(&[1.0, 0.1, 0.01]);
        let a = derive_asgd_params(&inst, None).unwrap();
        let b = derive_asgd_params(&inst, Some(ParamConstants::theorem1())).unwrap();
        assert_eq!(a, b);
        let c = ParamConstants::<f64>::from_c1_c4(0.2, 1.0 / 9.0).unwrap();
        assert_relative_eq!(c.c2, 5f64.sqrt() / 9.0, max_relative = 1e-15);
        assert_relative_eq!(c.c3, 5f64.sqrt() / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_invalid_constants() {
        assert!(ParamConstants::<f64>::from_c1_c4(0.6, 0.1).is_err());
        assert!(ParamConstants::<f64>::from_c1_c4(0.2, 0.2).is_err());
        let mut k = ParamConstants::<f64>::theorem1();
        k.c3 *= 1.01;
        let err = derive_asgd_params(&discrete(&[1.0]), Some(k)).unwrap_err();
        assert!(matches!(err, AsgdError::InvalidConstants(m) if m.contains("c3")));
    }

    #[test]
    fn derived_quantities() {
        let p = derive_asgd_params(&discrete(&[1.0]), None).unwrap();
        assert_relative_eq!(p.c, 0.773_571_637_727_285_5, max_relative = 1e-13);
        assert_relative_eq!(p.g_hat, 0.193_392_909_431_821_4, max_relative = 1e-13);
        assert!(p.det_gap() > 0.0);
    }

    #[test]
    fn gaussian_fourth_moment_is_general_form() {
        let inst = gaussian(&[1.0, 0.5]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let h = inst.h();
        let expect = &h * (s[(0, 0)] * 1.0 + s[(1, 1)] * 0.5) + &h * (&s + s.transpose()) * &h;
        assert_relative_eq!(inst.fourth_moment(&s), expect, epsilon = 1e-15);
    }

    #[test]
    fn f32_instance_builds() {
        let inst = build_instance(
            DistributionSpec::<f32>::DiscreteOneHot { probabilities: vec![0.25; 4] },
            NoiseModel::AdditiveGaussian { sigma2: 1.0 },
            DVector::zeros(4),
        )
        .unwrap();
        let p = derive_asgd_params(&inst, None).unwrap();
        assert!((p.beta - 1.0 / 36.0).abs() < 1e-6);
    }
}
