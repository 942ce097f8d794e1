//! Forward pass: hidden layer, softmax, residual, loss and regularizer.

use crate::error::Result;
use crate::instance::ProblemInstance;
use crate::linalg::{Mat, Vector};

/// Logits with magnitude above this are not exponentiated at exact scale.
pub const EXACT_SCALE_LOGIT_LIMIT: f64 = 500.0;

/// ReLU state `1[z > 0]`; exactly-zero entries are inactive.
pub fn indicator(z: &Vector) -> Vector {
    z.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn relu(z: &Vector) -> Vector {
    z.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Max-shifted softmax. Also returns `log sum exp(z)`.
pub fn stable_softmax(z: &Vector) -> (Vector, f64) {
    let shift = z.max();
    let e = z.map(|v| (v - shift).exp());
    let s = e.sum();
    (e / s, shift + s.ln())
}

/// `A2 diag(ind) A1`, with the diagonal applied as a row mask on `A1`.
pub fn c_matrix_for_indicator(inst: &ProblemInstance, ind: &Vector) -> Mat {
    masked_product(&inst.a1, &inst.a2, ind)
}

/// `A2 diag(ind) A1`.
pub(crate) fn masked_product(a1: &Mat, a2: &Mat, ind: &Vector) -> Mat {
    let mut masked = a1.clone();
    for (k, &on) in ind.iter().enumerate() {
        if on == 0.0 {
            masked.row_mut(k).fill(0.0);
        }
    }
    a2 * masked
}

/// Every per-point quantity derived from `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCache {
    pub x: Vector,
    /// `relu(A1 x)`
    pub hidden: Vector,
    pub indicator: Vector,
    /// `A2 hidden`
    pub logits: Vector,
    /// `exp(logits)` at exact scale; `None` when some |logit| exceeds the limit.
    pub u: Option<Vector>,
    /// `<u, 1>`; `None` together with `u`.
    pub alpha: Option<f64>,
    /// `ln alpha`, always available.
    pub log_alpha: f64,
    pub softmax: Vector,
    /// `softmax - b`
    pub residual: Vector,
    pub loss: f64,
    /// `1/2 ||W C x||^2`
    pub reg: f64,
    pub loss_reg: f64,
}

impl EvalCache {
    pub fn overflow_suppressed(&self) -> bool {
        self.u.is_none()
    }

    pub fn active_count(&self) -> usize {
        self.indicator.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Evaluates the model at `x`.
pub fn eval(inst: &ProblemInstance, x: &Vector) -> Result<EvalCache> {
    inst.check_point(x)?;
    let pre = &inst.a1 * x;
    let hidden = relu(&pre);
    let ind = indicator(&pre);
    let logits = &inst.a2 * &hidden;
    Ok(finish_eval(inst, x.clone(), hidden, ind, logits))
}

pub(crate) fn finish_eval(inst: &ProblemInstance, x: Vector, hidden: Vector, ind: Vector, logits: Vector) -> EvalCache {
    let (softmax, log_alpha) = stable_softmax(&logits);
    let (u, alpha) = if logits.amax() <= EXACT_SCALE_LOGIT_LIMIT {
        let u = logits.map(f64::exp);
        let a = u.sum();
        (Some(u), Some(a))
    } else {
        (None, None)
    };
    let residual = &softmax - &inst.b;
    let loss = 0.5 * residual.norm_squared();

    let wcx = c_matrix_for_indicator(inst, &ind) * &x;
    let reg = 0.5 * wcx.component_mul(&inst.w).norm_squared();

    EvalCache {
        x,
        hidden,
        indicator: ind,
        logits,
        u,
        alpha,
        log_alpha,
        softmax,
        residual,
        loss,
        reg,
        loss_reg: loss + reg,
    }
}

/// `C = A2 diag(1[A1 x]) A1`.
pub fn eval_c_matrix(inst: &ProblemInstance, x: &Vector) -> Result<Mat> {
    inst.c_matrix_at(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::instance::generate_instance;

    fn tiny(b: Vec<f64>) -> ProblemInstance {
        ProblemInstance::new(
            Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]) * 0.5,
            Mat::from_row_slice(2, 3, &[0.3, -0.2, 0.1, 0.0, 0.4, -0.5]),
            Vector::from_vec(b),
            Vector::from_vec(vec![2.0, 3.0]),
            1.0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn dead_relu_gives_uniform_softmax() {
        let inst = tiny(vec![0.9, -0.1]);
        let c = eval(&inst, &Vector::from_vec(vec![-0.3, -0.2])).unwrap();
        assert_eq!(c.hidden, Vector::zeros(3));
        assert_eq!(c.logits, Vector::zeros(2));
        assert!((c.softmax[0] - 0.5).abs() < 1e-15 && (c.softmax[1] - 0.5).abs() < 1e-15);
        let expected = 0.5 * ((0.5f64 - 0.9).powi(2) + (0.5f64 + 0.1).powi(2));
        assert!((c.loss - expected).abs() < 1e-15);
        assert_eq!(c.reg, 0.0);
        assert_eq!(c.active_count(), 0);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let x = Vector::from_vec(vec![0.4, -0.1]);
        let f = eval(&tiny(vec![0.0, 0.0]), &x).unwrap().softmax;
        let c = eval(&tiny(f.iter().copied().collect()), &x).unwrap();
        assert_eq!(c.loss, 0.0);
        assert_eq!(c.residual, Vector::zeros(2));
    }

    #[test]
    fn softmax_of_ln3_and_zero() {
        let (f, lse) = stable_softmax(&Vector::from_vec(vec![3f64.ln(), 0.0]));
        assert!((f[0] - 0.75).abs() < 1e-15 && (f[1] - 0.25).abs() < 1e-15);
        assert!((lse - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_logits_are_flagged_but_softmax_survives() {
        let (f, _) = stable_softmax(&Vector::from_vec(vec![1000.0, 999.0]));
        assert!(f.iter().all(|v| v.is_finite()));
        let inst = ProblemInstance::new(
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(2, 1, &[1000.0, 0.0]),
            Vector::zeros(2),
            Vector::from_element(2, 1.0),
            1.0,
            0,
        )
        .unwrap();
        let c = eval(&inst, &Vector::from_vec(vec![1.0])).unwrap();
        assert!(c.overflow_suppressed());
        assert!((c.softmax.sum() - 1.0).abs() < 1e-12);
        assert!((c.log_alpha - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn c_matrix_masks() {
        let inst = generate_instance(24, 8, 6, 1.0, 3, 0.6).unwrap();
        let all = Vector::from_element(24, 1.0);
        let none = Vector::zeros(24);
        assert!((c_matrix_for_indicator(&inst, &all) - &inst.a2 * &inst.a1).amax() < 1e-15);
        assert_eq!(c_matrix_for_indicator(&inst, &none), Mat::zeros(8, 6));
    }

    #[test]
    fn c_matrix_matches_triple_loop() {
        let inst = generate_instance(24, 8, 6, 1.0, 4, 0.6).unwrap();
        let x = inst.reference_point() * 0.7 + Vector::from_fn(6, |i, _| 0.05 * (i as f64 - 2.5));
        let c = eval_c_matrix(&inst, &x).unwrap();
        let z = &inst.a1 * &x;
        for i in 0..8 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..24 {
                    let ind = if z[k] > 0.0 { 1.0 } else { 0.0 };
                    s += inst.a2[(i, k)] * ind * inst.a1[(k, j)];
                }
                assert!((c[(i, j)] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_length_is_dimension_error() {
        let inst = tiny(vec![0.0, 0.0]);
        assert!(matches!(eval(&inst, &Vector::zeros(3)), Err(Error::Dimension(_))));
        assert!(matches!(eval_c_matrix(&inst, &Vector::zeros(1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_is_inactive() {
        assert_eq!(indicator(&Vector::from_vec(vec![0.0, -0.0, 1e-300])), Vector::from_vec(vec![0.0, 0.0, 1.0]));
    }
}
