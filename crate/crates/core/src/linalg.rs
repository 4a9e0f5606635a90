//! Small dense symmetric-matrix helpers over `nalgebra`.
//!
//! Matrices cross module boundaries as row-major `&[f64]` slices of length
//! `d * d`; conversion to `DMatrix` happens here.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalues below this are floored before square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn to_matrix(a: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, a)
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(a: &[f64], d: usize, tol: f64) -> bool {
    (0..d).all(|i| (0..i).all(|j| (a[i * d + j] - a[j * d + i]).abs() <= tol))
}

pub fn min_eigenvalue(a: &[f64], d: usize) -> f64 {
    let m = symmetrize(&to_matrix(a, d));
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let q = &eig.eigenvectors;
    let mapped = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&(q * mapped * q.transpose()))
}

pub fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |l| libm::sqrt(l.max(EIGEN_FLOOR)))
}

pub fn inv_sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |l| 1.0 / libm::sqrt(l.max(EIGEN_FLOOR)))
}

/// Log-determinant and inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_logdet_inverse(a: &[f64], d: usize) -> Option<(f64, Vec<f64>)> {
    let chol = to_matrix(a, d).cholesky()?;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..d {
        logdet += 2.0 * libm::log(l[(i, i)]);
    }
    Some((logdet, to_row_major(&chol.inverse())))
}

/// Determinant and its gradient `d det / d a` (the cofactor matrix).
///
/// Falls back to explicit minors when the matrix is singular to working
/// precision, where `det * a^{-T}` is undefined.
pub fn det_and_cofactor(a: &[f64], d: usize) -> (f64, Vec<f64>) {
    let m = to_matrix(a, d);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if det != 0.0 {
        if let Some(inv) = lu.try_inverse() {
            let cof = inv.transpose() * det;
            if cof.iter().all(|v| v.is_finite()) {
                return (det, to_row_major(&cof));
            }
        }
    }
    (det, cofactor_by_minors(&m))
}

fn cofactor_by_minors(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    if d == 1 {
        return alloc::vec![1.0];
    }
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out.push(sign * minor.lu().determinant());
        }
    }
    out
}

/// Lower Cholesky factor of an SPD matrix, row-major.
pub fn cholesky_lower(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let m = symmetrize(&to_matrix(a, d));
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(to_row_major(&chol.l()))
}

pub fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * d..(i + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cofactor_matches_det_times_inverse_transpose() {
        let a = [2.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.5];
        let (det, cof) = det_and_cofactor(&a, 3);
        let m = to_matrix(&a, 3);
        assert_relative_eq!(det, m.determinant(), epsilon = 1e-12);
        let expect = m.try_inverse().unwrap().transpose() * det;
        for (c, e) in cof.iter().zip(to_row_major(&expect)) {
            assert_relative_eq!(*c, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn cofactor_of_singular_matrix() {
        // rank one: cofactor of [[1,2],[2,4]] is [[4,-2],[-2,1]]
        let (det, cof) = det_and_cofactor(&[1.0, 2.0, 2.0, 4.0], 2);
        assert_eq!(det, 0.0);
        assert_eq!(cof, alloc::vec![4.0, -2.0, -2.0, 1.0]);
    }

    #[test]
    fn sqrtm_squares_back() {
        let a = to_matrix(&[4.0, 1.0, 1.0, 3.0], 2);
        let s = sqrtm(&a);
        let back = &s * &s;
        for (x, y) in back.iter().zip(a.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
        let is = inv_sqrtm(&a);
        let ident = &is * &a * &is;
        assert_relative_eq!(ident[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ident[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spd_logdet() {
        let (ld, inv) = spd_logdet_inverse(&[2.0, 0.0, 0.0, 8.0], 2).unwrap();
        assert_relative_eq!(ld, libm::log(16.0), epsilon = 1e-14);
        assert_relative_eq!(inv[3], 0.125, epsilon = 1e-15);
        assert!(spd_logdet_inverse(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
