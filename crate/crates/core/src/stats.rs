//! Streaming mean and standard-error accumulators.

use nalgebra::DMatrix;

use crate::Scalar;

/// Welford accumulator for a scalar stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welford<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Scalar> Default for Welford<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Welford<T> {
    pub fn new() -> Self {
        Self { count: 0, mean: T::zero(), m2: T::zero() }
    }

    pub fn push(&mut self, x: T) {
        self.count += 1;
        let n = T::lit(self.count as f64);
        let delta = x - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = T::lit(self.count as f64);
        let nb = T::lit(other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            self.m2 / T::lit((self.count - 1) as f64)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            (self.variance() / T::lit(self.count as f64)).sqrt()
        }
    }
}

impl<T: Scalar> FromIterator<T> for Welford<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Entrywise Welford accumulator for a stream of equally sized matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWelford<T: Scalar> {
    count: u64,
    mean: DMatrix<T>,
    m2: DMatrix<T>,
}

impl<T: Scalar> MatrixWelford<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { count: 0, mean: DMatrix::zeros(rows, cols), m2: DMatrix::zeros(rows, cols) }
    }

    pub fn push(&mut self, x: &DMatrix<T>) {
        self.count += 1;
        let n = T::lit(self.count as f64);
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x.iter()) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = T::lit(self.count as f64);
        let nb = T::lit(other.count as f64);
        let n = na + nb;
        for (((m, s), &om), &os) in self
            .mean
            .iter_mut()
            .zip(self.m2.iter_mut())
            .zip(other.mean.iter())
            .zip(other.m2.iter())
        {
            let delta = om - *m;
            *m += delta * nb / n;
            *s += os + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &DMatrix<T> {
        &self.mean
    }

    pub fn stderr(&self) -> DMatrix<T> {
        if self.count < 2 {
            return DMatrix::zeros(self.mean.nrows(), self.mean.ncols());
        }
        let n = T::lit(self.count as f64);
        let nm1 = T::lit((self.count - 1) as f64);
        self.m2.map(|s| (s / nm1 / n).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matches_two_pass_formulas() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25, 0.5];
        let w: Welford<f64> = xs.iter().copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert_relative_eq!(w.mean(), mean, max_relative = 1e-14);
        assert_relative_eq!(w.variance(), var, max_relative = 1e-14);
        assert_relative_eq!(w.stderr(), (var / n).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 * 0.1).collect();
        let all: Welford<f64> = xs.iter().copied().collect();
        let mut a: Welford<f64> = xs[..10].iter().copied().collect();
        let b: Welford<f64> = xs[10..].iter().copied().collect();
        a.merge(&b);
        assert_eq!(a.count(), all.count());
        assert_relative_eq!(a.mean(), all.mean(), max_relative = 1e-13);
        assert_relative_eq!(a.variance(), all.variance(), max_relative = 1e-12);
    }

    #[test]
    fn single_observation_has_zero_stderr() {
        let mut w = Welford::<f64>::new();
        w.push(3.0);
        assert_eq!(w.stderr(), 0.0);
        assert_eq!(w.mean(), 3.0);
    }

    #[test]
    fn matrix_accumulator_is_entrywise() {
        let mut m = MatrixWelford::<f64>::new(1, 2);
        let mut a = Welford::<f64>::new();
        let mut b = Welford::<f64>::new();
        for i in 0..20 {
            let x = (i as f64).sin();
            let y = (i as f64 * 0.3).cos();
            m.push(&DMatrix::from_row_slice(1, 2, &[x, y]));
            a.push(x);
            b.push(y);
        }
        assert_relative_eq!(m.mean()[(0, 0)], a.mean(), max_relative = 1e-14);
        assert_relative_eq!(m.stderr()[(0, 1)], b.stderr(), max_relative = 1e-12);
    }
}
