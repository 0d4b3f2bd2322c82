//! Small dense helpers: vectorization, operator matrices, spectral quantities.
//!
//! Matrices are vectorized column-major, matching nalgebra's storage, so that
//! `vec(A S B) = (Bᵀ ⊗ A) vec(S)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::Scalar;

pub fn vectorize<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize<T: Scalar>(v: &DVector<T>, dim: usize) -> DMatrix<T> {
    debug_assert_eq!(v.len(), dim * dim);
    DMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// `(S + Sᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Trace inner product `⟨A, B⟩ = tr(Aᵀ B)`.
pub fn frobenius_inner<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Matrix of the linear map `S ↦ f(S)` on `dim × dim` matrices, built column by
/// column from the images of the elementary basis matrices.
pub fn operator_matrix<T, F>(dim: usize, f: F) -> DMatrix<T>
where
    T: Scalar,
    F: Fn(&DMatrix<T>) -> DMatrix<T>,
{
    let n = dim * dim;
    let mut out = DMatrix::zeros(n, n);
    let mut basis = DMatrix::zeros(dim, dim);
    for k in 0..n {
        basis[k] = T::one();
        let image = f(&basis);
        out.column_mut(k).copy_from_slice(image.as_slice());
        basis[k] = T::zero();
    }
    out
}

/// Applies an operator matrix (as built by [`operator_matrix`]) to a matrix.
pub fn apply_operator<T: Scalar>(op: &DMatrix<T>, s: &DMatrix<T>) -> DMatrix<T> {
    let dim = s.nrows();
    let image = op * vectorize(s);
    unvectorize(&image, dim)
}

pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_sym_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).min()
}

pub fn max_sym_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).max()
}

/// Largest eigenvalue modulus of a general square matrix, computed in `f64`.
///
/// Uses faer's nonsymmetric eigensolver: nalgebra's Schur iteration does not
/// converge on the highly degenerate spectra of the covariance operators.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    if n == 0 {
        return T::zero();
    }
    let mf = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].to_f64_lossy());
    let radius = match mf.eigenvalues() {
        Ok(ev) => ev.iter().map(|z| z.norm()).fold(0.0f64, f64::max),
        Err(_) => f64::NAN,
    };
    T::lit(radius)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    m.singular_values().max()
}

/// Frobenius norm.
pub fn frobenius_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    frobenius_inner(m, m).sqrt()
}

pub fn diag_matrix<T: Scalar>(d: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_diagonal(d)
}

/// Assembles `[[a, b], [c, d]]` from four equally sized square blocks.
pub fn block2<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    d: &DMatrix<T>,
) -> DMatrix<T> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vec_identity_matches_kronecker() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.25, 3.0]);
        let lhs = vectorize(&(&a * &s * &b));
        let rhs = b.transpose().kronecker(&a) * vectorize(&s);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn operator_matrix_reproduces_map() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0, 0.0, 0.0, 2.0]);
        let op = operator_matrix(3, |s: &DMatrix<f64>| &a * s * a.transpose());
        let s = DMatrix::from_fn(3, 3, |i, j| (i as f64) - 2.0 * (j as f64));
        assert_relative_eq!(apply_operator(&op, &s), &a * &s * a.transpose(), epsilon = 1e-13);
    }

    #[test]
    fn spectral_radius_of_rotation_is_its_scale() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&m), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn spectral_radius_of_degenerate_spectrum() {
        // Block-diagonal with eight copies of a rotation-scaling block.
        let r = DMatrix::from_row_slice(2, 2, &[0.6, -0.7, 0.7, 0.6]);
        let m = DMatrix::<f64>::identity(8, 8).kronecker(&r);
        assert_relative_eq!(spectral_radius(&m), (0.85f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn block_assembly_layout() {
        let i = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::<f64>::zeros(2, 2);
        let m = block2(&i, &(&i * 2.0), &z, &(&i * 3.0));
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(3, 3)], 3.0);
        assert_eq!(m[(2, 0)], 0.0);
    }
}
