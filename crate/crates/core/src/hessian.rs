//! Hessians of the loss through the `C^T B C` decomposition.
//!
//! Three routes compute the same second derivatives:
//!
//! * [`build_hessian`] assembles `C^T B(x) C` densely,
//! * [`hessian_entry`] evaluates one entry as the quadratic form
//!   `v_i^T B(x) v_j` with `v_i = A2 diag(1[A1 x]) A1[:, i]`,
//! * [`hessian_six_term`] evaluates one entry from the six inner products
//!   obtained by differentiating the gradient directly, before any matrix
//!   factorization.
//!
//! Agreement of the three is the numerical check of the decomposition.

use crate::derivatives::masked_column_image;
use crate::error::{Error, Result};
use crate::forward::{c_matrix_for_indicator, EvalCache};
use crate::instance::ProblemInstance;
use crate::linalg::{Mat, Vector};

/// The five pieces of `B(x)` plus the assembled Hessians.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianParts {
    pub c_matrix: Mat,
    /// `diag(f o (f + c))`
    pub b1: Mat,
    /// `diag(f) (c + f) f^T`
    pub b2: Mat,
    /// `f (c + f)^T diag(f)`
    pub b3: Mat,
    /// `<2c + f, f> f f^T`
    pub b4: Mat,
    /// `<c, f> diag(f)`
    pub b5: Mat,
    /// `B = B1 - B2 - B3 + B4 - B5`
    pub b_total: Mat,
    /// `D = B + W^2`
    pub d_matrix: Mat,
    /// `C^T B C`
    pub hess_l: Mat,
    /// `C^T W^2 C`
    pub hess_reg: Mat,
    /// `C^T D C`
    pub hess_l_reg: Mat,
}

/// The five `B` pieces from the softmax `f` and residual `c`.
pub fn b_pieces(f: &Vector, c: &Vector) -> [Mat; 5] {
    let cf = c + f;
    let f_cf = f.component_mul(&cf);
    let b1 = Mat::from_diagonal(&f_cf);
    let b2 = &f_cf * f.transpose();
    let b3 = f * f_cf.transpose();
    let b4 = (f * f.transpose()) * (c * 2.0 + f).dot(f);
    let b5 = Mat::from_diagonal(f) * c.dot(f);
    [b1, b2, b3, b4, b5]
}

/// `B(x)` alone.
pub fn b_matrix(cache: &EvalCache) -> Mat {
    let [b1, b2, b3, b4, b5] = b_pieces(&cache.softmax, &cache.residual);
    b1 - b2 - b3 + b4 - b5
}

fn check(inst: &ProblemInstance, cache: &EvalCache) -> Result<()> {
    if cache.x.len() != inst.d || cache.indicator.len() != inst.n || cache.softmax.len() != inst.m {
        return Err(Error::Dimension("evaluation cache does not match the instance".into()));
    }
    Ok(())
}

/// Assembles every Hessian piece at the cached point.
pub fn build_hessian(inst: &ProblemInstance, cache: &EvalCache) -> Result<HessianParts> {
    check(inst, cache)?;
    let c_matrix = c_matrix_for_indicator(inst, &cache.indicator);
    let [b1, b2, b3, b4, b5] = b_pieces(&cache.softmax, &cache.residual);
    let b_total = &b1 - &b2 - &b3 + &b4 - &b5;
    let w2 = Mat::from_diagonal(&inst.w.component_mul(&inst.w));
    let d_matrix = &b_total + &w2;

    let ct = c_matrix.transpose();
    let hess_l = &ct * &b_total * &c_matrix;
    let hess_reg = &ct * &w2 * &c_matrix;
    let hess_l_reg = &ct * &d_matrix * &c_matrix;

    Ok(HessianParts { c_matrix, b1, b2, b3, b4, b5, b_total, d_matrix, hess_l, hess_reg, hess_l_reg })
}

/// Convenience: the regularized Hessian `C^T (B + W^2) C`.
pub fn hessian_l_reg(inst: &ProblemInstance, cache: &EvalCache) -> Result<Mat> {
    Ok(build_hessian(inst, cache)?.hess_l_reg)
}

fn check_index(inst: &ProblemInstance, i: usize, j: usize) -> Result<()> {
    if i >= inst.d || j >= inst.d {
        return Err(Error::IndexOutOfRange { i, j, d: inst.d });
    }
    Ok(())
}

/// Entry `(i, j)` of `hess L` as `v_i^T B v_j`, without assembling the d x d matrix.
pub fn hessian_entry(inst: &ProblemInstance, cache: &EvalCache, i: usize, j: usize) -> Result<f64> {
    check(inst, cache)?;
    check_index(inst, i, j)?;
    let vi = masked_column_image(inst, cache, i);
    let vj = masked_column_image(inst, cache, j);
    Ok(vi.dot(&(b_matrix(cache) * vj)))
}

/// Entry `(i, j)` of `hess L` from the six inner products
///
/// ```text
///   <f o v_i, f o v_j> + <c, f o v_j o v_i>
/// - <c + f, f o v_i> <f, v_j> - <c + f, f o v_j> <f, v_i>
/// + <2c + f, f> <f, v_j> <f, v_i> - <c, f> <f o v_j, v_i>
/// ```
///
/// The same expression is used on the diagonal.
pub fn hessian_six_term(inst: &ProblemInstance, cache: &EvalCache, i: usize, j: usize) -> Result<f64> {
    check(inst, cache)?;
    check_index(inst, i, j)?;
    let f = &cache.softmax;
    let c = &cache.residual;
    let vi = masked_column_image(inst, cache, i);
    let vj = masked_column_image(inst, cache, j);
    let f_vi = f.component_mul(&vi);
    let f_vj = f.component_mul(&vj);
    let c_plus_f = c + f;
    let two_c_plus_f = c * 2.0 + f;
    let f_dot_vi = f.dot(&vi);
    let f_dot_vj = f.dot(&vj);

    let t1 = f_vi.dot(&f_vj);
    let t2 = c.dot(&f_vj.component_mul(&vi));
    let t3 = c_plus_f.dot(&f_vi) * f_dot_vj;
    let t4 = c_plus_f.dot(&f_vj) * f_dot_vi;
    let t5 = two_c_plus_f.dot(f) * f_dot_vj * f_dot_vi;
    let t6 = c.dot(f) * f_vj.dot(&vi);
    Ok(t1 + t2 - t3 - t4 + t5 - t6)
}
