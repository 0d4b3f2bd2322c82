//! Sampling and the stochastic first-order oracle.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{AsgdError, Result};
use crate::linalg::{max_sym_eigenvalue, symmetrize};
use crate::model::{DistributionSpec, ProblemInstance};
use crate::stats::{MatrixWelford, Welford};
use crate::Scalar;

/// Deterministic generator for a `(seed, stream)` pair. Distinct streams of
/// one seed never overlap.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar> {
    pub a: DVector<T>,
    pub b: T,
}

impl<T: Scalar> Sample<T> {
    pub fn zeros(d: usize) -> Self {
        Self { a: DVector::zeros(d), b: T::zero() }
    }
}

#[derive(Debug, Clone)]
enum Feature<T> {
    OneHot(WeightedIndex<f64>),
    Gaussian(Vec<T>),
}

/// Reusable sampler for one instance; avoids rebuilding the discrete table on
/// every draw.
#[derive(Debug, Clone)]
pub struct Sampler<T: Scalar> {
    feature: Feature<T>,
    noise_sd: T,
    x_star: DVector<T>,
}

impl<T: Scalar> Sampler<T> {
    pub fn new(instance: &ProblemInstance<T>) -> Self {
        let feature = match &instance.dist {
            DistributionSpec::DiscreteOneHot { probabilities } => {
                let w: Vec<f64> = probabilities.iter().map(|p| p.to_f64_lossy()).collect();
                Feature::OneHot(WeightedIndex::new(w).expect("validated probabilities"))
            }
            DistributionSpec::Gaussian { eigenvalues } => {
                Feature::Gaussian(eigenvalues.iter().map(|l| l.sqrt()).collect())
            }
        };
        Self { feature, noise_sd: instance.sigma2().sqrt(), x_star: instance.x_star.clone() }
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    /// Overwrites `out` with a fresh sample.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Sample<T>) {
        match &self.feature {
            Feature::OneHot(table) => {
                out.a.fill(T::zero());
                let i = table.sample(rng);
                out.a[i] = T::one();
                out.b = self.x_star[i];
            }
            Feature::Gaussian(scales) => {
                for (ai, s) in out.a.iter_mut().zip(scales) {
                    let z: f64 = rng.sample(StandardNormal);
                    *ai = *s * T::lit(z);
                }
                out.b = out.a.dot(&self.x_star);
            }
        }
        if self.noise_sd > T::zero() {
            let z: f64 = rng.sample(StandardNormal);
            out.b += self.noise_sd * T::lit(z);
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample<T> {
        let mut s = Sample::zeros(self.dim());
        self.draw_into(rng, &mut s);
        s
    }
}

/// One sample `(a, b)`. Loops should build a [`Sampler`] once instead.
pub fn draw_sample<T: Scalar, R: Rng + ?Sized>(instance: &ProblemInstance<T>, rng: &mut R) -> Sample<T> {
    Sampler::new(instance).draw(rng)
}

/// `−(b − ⟨a, x⟩) a`.
pub fn stochastic_gradient<T: Scalar>(sample: &Sample<T>, x: &DVector<T>) -> Result<DVector<T>> {
    if sample.a.len() != x.len() {
        return Err(AsgdError::DimensionMismatch { expected: sample.a.len(), got: x.len() });
    }
    let residual = sample.b - sample.a.dot(x);
    Ok(&sample.a * (-residual))
}

/// Scalar multiplier `r` with `∇̂P(x) = r a`, for in-place updates.
#[inline]
pub(crate) fn gradient_coefficient<T: Scalar>(sample: &Sample<T>, x: &DVector<T>) -> T {
    sample.a.dot(x) - sample.b
}

/// `H (x − x*)`.
pub fn exact_gradient<T: Scalar>(instance: &ProblemInstance<T>, x: &DVector<T>) -> DVector<T> {
    (x - &instance.x_star).component_mul(&instance.h_diag)
}

/// `P(x) − P(x*) = ½ (x − x*)ᵀ H (x − x*)`.
pub fn excess_risk<T: Scalar>(instance: &ProblemInstance<T>, x: &DVector<T>) -> T {
    let half = T::lit(0.5);
    x.iter()
        .zip(instance.x_star.iter())
        .zip(instance.h_diag.iter())
        .fold(T::zero(), |acc, ((xi, si), hi)| {
            let e = *xi - *si;
            acc + *hi * e * e
        })
        * half
}

/// `d σ² / n`.
pub fn minimax_reference<T: Scalar>(d: usize, sigma2: T, n: usize) -> T {
    T::from_usize_lossy(d) * sigma2 / T::from_usize_lossy(n.max(1))
}

/// Entrywise Monte-Carlo mean and standard error of a matrix expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate<T: Scalar> {
    pub mean: DMatrix<T>,
    pub stderr: DMatrix<T>,
    pub samples: u64,
}

/// Monte-Carlo estimate of `M(S) = E[(aᵀ S a) a aᵀ]`.
pub fn estimate_fourth_moment<T: Scalar, R: Rng + ?Sized>(
    instance: &ProblemInstance<T>,
    s: &DMatrix<T>,
    samples: usize,
    rng: &mut R,
) -> MatrixEstimate<T> {
    let d = instance.dim();
    let sampler = Sampler::new(instance);
    let mut sample = Sample::zeros(d);
    let mut acc = MatrixWelford::new(d, d);
    for _ in 0..samples {
        sampler.draw_into(rng, &mut sample);
        let w = sample.a.dot(&(s * &sample.a));
        acc.push(&(&sample.a * sample.a.transpose() * w));
    }
    MatrixEstimate { mean: acc.mean().clone(), stderr: acc.stderr(), samples: acc.count() }
}

/// Monte-Carlo estimate of a smallest scalar `c` with `M(S) ≼ c H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimate<T: Scalar> {
    /// Rayleigh-quotient estimate along the closed-form maximizing direction.
    pub value: T,
    pub stderr: T,
    /// Largest generalized eigenvalue of the estimated `M(S)` against `H`.
    pub generalized_eigenvalue: T,
    pub moment: MatrixEstimate<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEstimate<T: Scalar> {
    /// `R²`, from `S = I`.
    pub r2: ConstantEstimate<T>,
    /// `κ̃`, from `S = H⁻¹`.
    pub kappa_tilde: ConstantEstimate<T>,
}

/// Monte-Carlo estimates of `R²` and `κ̃` from `samples` draws.
pub fn estimate_condition_numbers<T: Scalar>(
    instance: &ProblemInstance<T>,
    samples: usize,
    seed: u64,
) -> ConditionEstimate<T> {
    let d = instance.dim();
    let r2 = estimate_constant(instance, &DMatrix::identity(d, d), samples, &mut rng_for(seed, 0));
    let kt = estimate_constant(instance, &instance.h_inv(), samples, &mut rng_for(seed, 1));
    ConditionEstimate { r2, kappa_tilde: kt }
}

fn estimate_constant<T: Scalar, R: Rng + ?Sized>(
    instance: &ProblemInstance<T>,
    s: &DMatrix<T>,
    samples: usize,
    rng: &mut R,
) -> ConstantEstimate<T> {
    let d = instance.dim();
    // Both S = I and S = H⁻¹ give a diagonal M(S) for diagonal H, so the top
    // generalized eigenvector is a coordinate axis.
    let exact = instance.fourth_moment(s);
    let k = (0..d)
        .max_by(|&i, &j| {
            let ri = exact[(i, i)] / instance.h_diag[i];
            let rj = exact[(j, j)] / instance.h_diag[j];
            ri.partial_cmp(&rj).expect("finite")
        })
        .unwrap_or(0);
    let sampler = Sampler::new(instance);
    let mut sample = Sample::zeros(d);
    let mut ray = Welford::new();
    let mut mat = MatrixWelford::new(d, d);
    for _ in 0..samples {
        sampler.draw_into(rng, &mut sample);
        let w = sample.a.dot(&(s * &sample.a));
        ray.push(w * sample.a[k] * sample.a[k] / instance.h_diag[k]);
        mat.push(&(&sample.a * sample.a.transpose() * w));
    }
    let h_inv_sqrt = DMatrix::from_diagonal(&instance.h_diag.map(|h| T::one() / h.sqrt()));
    let whitened = symmetrize(&(&h_inv_sqrt * mat.mean() * &h_inv_sqrt));
    ConstantEstimate {
        value: ray.mean(),
        stderr: ray.stderr(),
        generalized_eigenvalue: max_sym_eigenvalue(&whitened),
        moment: MatrixEstimate { mean: mat.mean().clone(), stderr: mat.stderr(), samples: mat.count() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_instance, NoiseModel};
    use approx::assert_relative_eq;

    fn inst(dist: DistributionSpec<f64>, sigma2: f64, x_star: &[f64]) -> ProblemInstance<f64> {
        let noise = if sigma2 > 0.0 { NoiseModel::AdditiveGaussian { sigma2 } } else { NoiseModel::Noiseless };
        build_instance(dist, noise, DVector::from_column_slice(x_star)).unwrap()
    }

    #[test]
    fn degenerate_discrete_sample() {
        let i = inst(DistributionSpec::DiscreteOneHot { probabilities: vec![1.0] }, 0.0, &[0.0]);
        let mut rng = rng_for(1, 0);
        for _ in 0..10 {
            let s = draw_sample(&i, &mut rng);
            assert_eq!(s.a[0], 1.0);
            assert_eq!(s.b, 0.0);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let i = inst(DistributionSpec::uniform_discrete(2), 0.0, &[0.0, 0.0]);
        let sampler = Sampler::new(&i);
        let mut rng = rng_for(2, 0);
        let hits = (0..100_000).filter(|_| sampler.draw(&mut rng).a[0] == 1.0).count();
        let freq = hits as f64 / 1e5;
        assert!((freq - 0.5).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn gaussian_label_second_moment() {
        let x_star = [0.7, -1.2];
        let i = inst(DistributionSpec::Gaussian { eigenvalues: vec![1.0, 1.0] }, 1.0, &x_star);
        let sampler = Sampler::new(&i);
        let mut rng = rng_for(3, 0);
        let w: Welford<f64> = (0..100_000).map(|_| sampler.draw(&mut rng).b.powi(2)).collect();
        let expect = 0.7f64.powi(2) + 1.2f64.powi(2) + 1.0;
        assert!((w.mean() - expect).abs() <= 5.0 * w.stderr(), "{} vs {expect}", w.mean());
    }

    #[test]
    fn gradient_substitutions() {
        let s = Sample { a: DVector::from_vec(vec![1.0, 0.0]), b: 0.0 };
        assert_eq!(stochastic_gradient(&s, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), DVector::from_vec(vec![1.0, 0.0]));
        let s = Sample { a: DVector::from_vec(vec![1.0, 2.0]), b: 3.0 };
        assert_eq!(stochastic_gradient(&s, &DVector::zeros(2)).unwrap(), DVector::from_vec(vec![-3.0, -6.0]));
        assert!(matches!(
            stochastic_gradient(&s, &DVector::zeros(3)),
            Err(AsgdError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn gradient_vanishes_at_optimum_without_noise() {
        let x_star = [0.3, -0.4, 1.1];
        let i = inst(DistributionSpec::Gaussian { eigenvalues: vec![1.0, 0.5, 0.2] }, 0.0, &x_star);
        let sampler = Sampler::new(&i);
        let mut rng = rng_for(4, 0);
        for _ in 0..100 {
            let g = stochastic_gradient(&sampler.draw(&mut rng), &i.x_star).unwrap();
            assert!(g.amax() < 1e-14);
        }
    }

    #[test]
    fn excess_risk_quadratic_form() {
        let i = inst(DistributionSpec::DiscreteOneHot { probabilities: vec![0.5, 0.5] }, 0.0, &[0.0, 0.0]);
        assert_eq!(excess_risk(&i, &DVector::from_vec(vec![1.0, 1.0])), 0.5);
        assert_eq!(excess_risk(&i, &i.x_star), 0.0);
    }

    #[test]
    fn minimax_values() {
        assert_relative_eq!(minimax_reference(50, 100.0, 1_000_000), 0.005, max_relative = 1e-15);
        assert_eq!(minimax_reference(3, 0.0, 10), 0.0);
        assert_eq!(minimax_reference(1, 1.0, 1), 1.0);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let i = inst(DistributionSpec::Gaussian { eigenvalues: vec![1.0, 0.1] }, 1.0, &[1.0, 2.0]);
        let sampler = Sampler::new(&i);
        let a: Vec<_> = { let mut r = rng_for(9, 0); (0..5).map(|_| sampler.draw(&mut r)).collect() };
        let b: Vec<_> = { let mut r = rng_for(9, 0); (0..5).map(|_| sampler.draw(&mut r)).collect() };
        let c: Vec<_> = { let mut r = rng_for(9, 1); (0..5).map(|_| sampler.draw(&mut r)).collect() };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
