//! Small dense complex linear-algebra helpers built on nalgebra.

use nalgebra::{Cholesky, SymmetricEigen};

use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Hermitian tolerance used when validating inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Largest entry of `|A - A^H|`.
pub fn hermitian_asymmetry(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Rejects non-square or non-Hermitian matrices, with the tolerance scaled by
/// the matrix magnitude.
pub fn ensure_hermitian(a: &CMatrix, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = a.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let asym = hermitian_asymmetry(a);
    if asym > tol * scale {
        return Err(Error::NotHermitian(asym));
    }
    Ok(())
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigenvalues(a: &CMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    eigenvalues(a).first().copied().unwrap_or(f64::NAN)
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(a: &CMatrix) -> Result<CMatrix> {
    let chol = Cholesky::new(hermitian_part(a))
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// General square inverse.
pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse failed".into()))
}

/// Rotates `v` so that its largest-magnitude entry is real and non-negative.
/// The lowest index wins among entries of equal magnitude.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let mag = z.norm();
        if mag > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = mag;
        }
    }
    if best_mag > 0.0 {
        let rot = v[best].conj() / best_mag;
        v.apply(|z| *z *= rot);
    }
}

/// Largest eigenvalue and its unit eigenvector, phase-normalized.
///
/// When the top eigenvalue is degenerate (gap below 1e-12) the candidate
/// vectors are phase-normalized and the lexicographically largest real-part
/// pattern is returned.
pub fn top_eigenpair(a: &CMatrix) -> (f64, CVector) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = top.abs().max(1.0);
    let mut best: Option<CVector> = None;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if top - lambda > 1e-12 * scale {
            continue;
        }
        let mut v = eig.eigenvectors.column(i).into_owned();
        let norm = v.norm();
        v /= Complex64::new(norm, 0.0);
        fix_phase(&mut v);
        best = Some(match best {
            None => v,
            Some(b) => {
                if lexicographic_gt(&v, &b) {
                    v
                } else {
                    b
                }
            }
        });
    }
    (top, best.expect("non-empty matrix"))
}

fn lexicographic_gt(a: &CVector, b: &CVector) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x.re - y.re).abs() > 1e-12 {
            return x.re > y.re;
        }
        if (x.im - y.im).abs() > 1e-12 {
            return x.im > y.im;
        }
    }
    false
}

/// Square-root factor `L` with `L L^H = A` for a Hermitian PSD matrix.
///
/// Uses Cholesky when it succeeds and an eigendecomposition with eigenvalues
/// floored at 1e-14 otherwise.
pub fn sqrt_factor(a: &CMatrix) -> CMatrix {
    let h = hermitian_part(a);
    if let Some(chol) = Cholesky::new(h.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut l = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(1e-14).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    l
}

/// If `a` equals `c * I` within `tol`, returns `c`.
pub fn scaled_identity(a: &CMatrix, tol: f64) -> Option<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return None;
    }
    let c = a[(0, 0)].re;
    for i in 0..n {
        for j in 0..n {
            let expected = if i == j { c } else { 0.0 };
            if (a[(i, j)] - Complex64::new(expected, 0.0)).norm() > tol * c.abs().max(1.0) {
                return None;
            }
        }
    }
    Some(c)
}

/// Principal submatrix on the rows/columns in `idx`.
pub fn principal_submatrix(a: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

pub fn subvector(v: &CVector, idx: &[usize]) -> CVector {
    CVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn real_scalar(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `v v^H`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `w^H A w`, real part.
pub fn quadratic_form(w: &CVector, a: &CMatrix) -> f64 {
    (w.adjoint() * a * w)[(0, 0)].re
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn top_eigenpair_of_diagonal() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![c(2.0, 0.0), c(1.0, 0.0)]));
        let (lambda, v) = top_eigenpair(&a);
        assert!((lambda - 2.0).abs() < 1e-14);
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(v[1].norm() < 1e-14);
    }

    #[test]
    fn phase_convention_makes_largest_entry_real() {
        let mut v = CVector::from_vec(vec![c(0.0, 0.6), c(0.0, -0.8)]);
        fix_phase(&mut v);
        assert!((v[1] - c(0.8, 0.0)).norm() < 1e-14);
        assert!((v[0] - c(-0.6, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn inverse_and_sqrt_factor() {
        let a = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 0.5), c(0.5, -0.5), c(1.0, 0.0)]);
        let inv = inverse_hpd(&a).unwrap();
        assert!((&a * &inv - identity(2)).norm() < 1e-13);
        let l = sqrt_factor(&a);
        assert!((&l * l.adjoint() - &a).norm() < 1e-13);
        assert!(ensure_hermitian(&a, HERMITIAN_TOL).is_ok());
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(ensure_hermitian(&bad, HERMITIAN_TOL).is_err());
    }

    #[test]
    fn sqrt_factor_handles_singular_input() {
        let a = CMatrix::from_element(2, 2, c(1.0, 0.0));
        let l = sqrt_factor(&a);
        assert!((&l * l.adjoint() - &a).norm() < 1e-6);
    }

    #[test]
    fn detects_scaled_identity() {
        assert_eq!(scaled_identity(&(identity(3) * c(2.0, 0.0)), 1e-12), Some(2.0));
        let mut a = identity(3);
        a[(0, 1)] = c(0.1, 0.0);
        assert_eq!(scaled_identity(&a, 1e-12), None);
    }
}
