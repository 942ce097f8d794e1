//! Two-layer softmax-ReLU regression: closed-form loss, gradient and Hessian
//! (through the `C^T B C` decomposition), a leverage-score Hessian sketch,
//! approximate-Newton and loss-Newton solvers, and a harness that checks the
//! model's theoretical bounds numerically.
//!
//! The model, for `A1: n x d`, `A2: m x n`, target `b` and weights `w`:
//!
//! ```text
//! h(x) = relu(A1 x)            f(x) = softmax(A2 h(x))
//! L(x) = 1/2 ||f(x) - b||^2    R(x) = 1/2 ||W C x||^2,  C = A2 diag(1[A1 x]) A1
//! L_reg(x) = L(x) + R(x)
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod derivatives;
pub mod error;
pub mod forward;
pub mod hessian;
pub mod instance;
pub mod linalg;
pub mod oracle;
pub mod sketch;
pub mod solver;

pub use bounds::{compute_bounds, verify_bounds, verify_bounds_with, BoundsReport, TheoreticalBounds, VerifyConfig};
pub use derivatives::{grad_l, grad_l_reg};
pub use error::{Error, Result};
pub use forward::{eval, eval_c_matrix, EvalCache};
pub use hessian::{build_hessian, hessian_entry, hessian_six_term, HessianParts};
pub use instance::{choose_weights, generate_instance, validate_assumptions, AssumptionReport, ProblemInstance};
pub use linalg::{Mat, Vector};
pub use sketch::{sketch_pd_form, SketchConfig, SketchResult};
pub use solver::{
    approx_newton_solve, loss_newton_solve, predict_iterations, reference_optimum, ConvergenceTrace, ReferenceOptimum,
    SolverConfig, SolverMode, StepKind,
};
