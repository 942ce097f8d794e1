//! Dense helpers on top of `nalgebra` shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance below which a singular value counts as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Singular values sorted in descending order.
pub fn singular_values_desc(a: &Mat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn sigma_min(a: &Mat) -> f64 {
    singular_values_desc(a).last().copied().unwrap_or(0.0)
}

/// Numerical rank with the `RANK_RTOL * sigma_max` cutoff.
pub fn numerical_rank(a: &Mat) -> usize {
    let s = singular_values_desc(a);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_RTOL * top).count()
}

pub fn is_full_rank(a: &Mat) -> bool {
    numerical_rank(a) == a.nrows().min(a.ncols())
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Ascending eigenvalues of the symmetric part of `a`.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_extreme_eigenvalues(a: &Mat) -> (f64, f64) {
    let ev = sym_eigenvalues(a);
    (ev[0], ev[ev.len() - 1])
}

/// Symmetric square root `V diag(sqrt(lambda)) V^T`.
///
/// Fails with `NotPd` unless `lambda_min > 1e-12 * lambda_max` and `lambda_min > 0`.
pub fn sym_sqrt_pd(a: &Mat) -> Result<Mat> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmin <= 1e-12 * lmax {
        return Err(Error::NotPd(format!(
            "eigenvalue floor violated: lambda_min = {lmin:e}, lambda_max = {lmax:e}"
        )));
    }
    let sqrt = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * Mat::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// Solves `h p = g` by Cholesky; a non-positive pivot is reported as `NotPd`.
pub fn cholesky_solve(h: &Mat, g: &Vector) -> Result<Vector> {
    let chol = symmetrize(h)
        .cholesky()
        .ok_or_else(|| Error::NotPd("Cholesky factorization hit a non-positive pivot".into()))?;
    Ok(chol.solve(g))
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn mat_to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

/// Frobenius-relative difference `||a - b||_F / max(||b||_F, tiny)`.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
