//! Finite-difference oracles, independent of the analytic derivative code.

use crate::instance::ProblemInstance;
use crate::linalg::{Mat, Vector};

/// Default step for gradients of scalar fields.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Default step for Jacobians of gradients.
pub const FD_HESS_STEP: f64 = 1e-4;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(func: F, x: &Vector, h: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    Vector::from_fn(x.len(), |i, _| {
        let xi = probe[i];
        probe[i] = xi + h;
        let up = func(&probe);
        probe[i] = xi - h;
        let down = func(&probe);
        probe[i] = xi;
        (up - down) / (2.0 * h)
    })
}

/// Central-difference Jacobian of `grad`, symmetrized as `(J + J^T) / 2`.
pub fn fd_hessian<G>(grad: G, x: &Vector, h: f64) -> Mat
where
    G: Fn(&Vector) -> Vector,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let d = x.len();
    let mut jac = Mat::zeros(d, d);
    let mut probe = x.clone();
    for j in 0..d {
        let xj = probe[j];
        probe[j] = xj + h;
        let up = grad(&probe);
        probe[j] = xj - h;
        let down = grad(&probe);
        probe[j] = xj;
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    let mut sym = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sym[(i, j)] = 0.5 * (jac[(i, j)] + jac[(j, i)]);
        }
    }
    sym
}

/// Distance of `A1 x` to the nearest ReLU kink, `min_i |(A1 x)_i|`.
pub fn kink_distance(inst: &ProblemInstance, x: &Vector) -> f64 {
    (&inst.a1 * x).iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}
