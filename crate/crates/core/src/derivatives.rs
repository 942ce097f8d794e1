//! Closed-form gradients of the loss and of the regularized loss.

use crate::error::{Error, Result};
use crate::forward::{c_matrix_for_indicator, EvalCache};
use crate::instance::ProblemInstance;
use crate::linalg::Vector;

fn check_cache(inst: &ProblemInstance, cache: &EvalCache) -> Result<()> {
    if cache.x.len() != inst.d || cache.indicator.len() != inst.n || cache.softmax.len() != inst.m {
        return Err(Error::Dimension("evaluation cache does not match the instance".into()));
    }
    Ok(())
}

/// `grad L = C^T (f o c - <c, f> f)`.
pub fn grad_l(inst: &ProblemInstance, cache: &EvalCache) -> Result<Vector> {
    check_cache(inst, cache)?;
    let f = &cache.softmax;
    let c = &cache.residual;
    let inner = f.component_mul(c) - f * c.dot(f);
    Ok(c_matrix_for_indicator(inst, &cache.indicator).tr_mul(&inner))
}

/// Coordinate-by-coordinate gradient using the Hadamard-product form
/// `<c, f o v_i> - <c, f> <f, v_i>` with `v_i = A2 (1[A1 x] o A1[:, i])`.
///
/// Slower than [`grad_l`]; kept as an independent route for differential tests.
pub fn grad_l_coordinatewise(inst: &ProblemInstance, cache: &EvalCache) -> Result<Vector> {
    check_cache(inst, cache)?;
    let f = &cache.softmax;
    let c = &cache.residual;
    let cf = c.dot(f);
    Ok(Vector::from_fn(inst.d, |i, _| {
        let v = masked_column_image(inst, cache, i);
        c.dot(&f.component_mul(&v)) - cf * f.dot(&v)
    }))
}

/// `A2 (1[A1 x] o A1[:, i])`, i.e. column `i` of `C`.
pub(crate) fn masked_column_image(inst: &ProblemInstance, cache: &EvalCache, i: usize) -> Vector {
    let col = inst.a1.column(i).component_mul(&cache.indicator);
    &inst.a2 * col
}

/// `grad R = C^T W^2 C x`.
pub fn grad_reg(inst: &ProblemInstance, cache: &EvalCache) -> Result<Vector> {
    check_cache(inst, cache)?;
    let c = c_matrix_for_indicator(inst, &cache.indicator);
    let w2 = inst.w.component_mul(&inst.w);
    Ok(c.tr_mul(&(&c * &cache.x).component_mul(&w2)))
}

/// `grad L_reg = grad L + C^T W^2 C x`.
pub fn grad_l_reg(inst: &ProblemInstance, cache: &EvalCache) -> Result<Vector> {
    Ok(grad_l(inst, cache)? + grad_reg(inst, cache)?)
}
