//! Newton-type solvers for the regularized loss.
//!
//! * [`approx_newton_solve`]: `x <- x - eta H~^{-1} g` where `H~` is the exact
//!   regularized Hessian or a leverage-score sketch of it.
//! * [`loss_newton_solve`]: exact-Hessian damped Newton with `eta = 1/N`,
//!   tracked through the loss gap to a reference minimum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::derivatives::grad_l_reg;
use crate::error::{Error, Result};
use crate::forward::eval;
use crate::hessian::build_hessian;
use crate::instance::ProblemInstance;
use crate::linalg::{cholesky_solve, Vector};
use crate::sketch::{sketch_with_rng, SketchConfig};

/// Contraction factor of the undamped step inside the convergence basin.
pub const APPROX_NEWTON_RATE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMode {
    ApproxNewton,
    LossNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Exact,
    Sketched,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Exact => "Exact",
            StepKind::Sketched => "Sketched",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `||grad L_reg|| <= grad_tol`.
    pub grad_tol: f64,
    /// Target loss gap (loss mode only).
    pub eps: f64,
    /// Replace the Hessian with a sketch each iteration (approximate mode only).
    pub sketch: Option<SketchConfig>,
    /// Seeds the stream from which per-iteration sketches are drawn.
    pub seed: u64,
}

impl SolverConfig {
    pub fn approx_newton() -> Self {
        Self {
            mode: SolverMode::ApproxNewton,
            eta: 1.0,
            max_iters: 100,
            grad_tol: 1e-10,
            eps: 1e-10,
            sketch: None,
            seed: 0,
        }
    }

    /// Damped Newton with `eta = 1 / n_const`.
    pub fn loss_newton(n_const: f64) -> Self {
        Self {
            mode: SolverMode::LossNewton,
            eta: 1.0 / n_const,
            max_iters: 100_000,
            grad_tol: 1e-12,
            eps: 1e-10,
            sketch: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.grad_tol >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be >= 0 and eps > 0".into()));
        }
        if let Some(s) = &self.sketch {
            if self.mode == SolverMode::LossNewton {
                return Err(Error::InvalidConfig("sketching applies to the approximate Newton mode only".into()));
            }
            s.validate()?;
        }
        Ok(())
    }

    fn step_kind(&self) -> StepKind {
        if self.sketch.is_some() {
            StepKind::Sketched
        } else {
            StepKind::Exact
        }
    }
}

/// Known minimizer used to measure distance and loss gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub x_star: Vec<f64>,
    pub l_min: f64,
    pub grad_norm: f64,
}

impl ReferenceOptimum {
    pub fn x(&self) -> Vector {
        Vector::from_vec(self.x_star.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub t: usize,
    pub x: Vector,
    pub loss_reg: f64,
    pub grad_norm: f64,
    pub dist_to_opt: Option<f64>,
    pub loss_gap: Option<f64>,
    pub step_kind: StepKind,
    /// `||x_t|| > radius`; the solver does not project.
    pub outside_ball: bool,
    /// `g^T H^{-1} g` with the exact regularized Hessian, when it was formed.
    pub newton_decrement_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub iterates: Vec<IterRecord>,
    pub converged: bool,
    pub iterations_used: usize,
    pub ball_exit: bool,
}

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&IterRecord> {
        self.iterates.last()
    }

    /// CSV with header `t,loss_reg,grad_norm,dist_to_opt,loss_gap,step_kind`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,loss_reg,grad_norm,dist_to_opt,loss_gap,step_kind\n");
        for r in &self.iterates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                fmt_real(r.loss_reg),
                fmt_real(r.grad_norm),
                r.dist_to_opt.map(fmt_real).unwrap_or_default(),
                r.loss_gap.map(fmt_real).unwrap_or_default(),
                r.step_kind.as_str()
            );
        }
        out
    }
}

/// Shortest decimal that parses back to the same double.
pub fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

/// Approximate Newton on the regularized loss.
pub fn approx_newton_solve(
    inst: &ProblemInstance,
    x0: &Vector,
    cfg: &SolverConfig,
    reference: Option<&ReferenceOptimum>,
) -> Result<ConvergenceTrace> {
    if cfg.mode != SolverMode::ApproxNewton {
        return Err(Error::InvalidConfig("approx_newton_solve needs mode ApproxNewton".into()));
    }
    run(inst, x0, cfg, reference)
}

/// Exact damped Newton on the regularized loss.
pub fn loss_newton_solve(
    inst: &ProblemInstance,
    x0: &Vector,
    cfg: &SolverConfig,
    reference: Option<&ReferenceOptimum>,
) -> Result<ConvergenceTrace> {
    if cfg.mode != SolverMode::LossNewton {
        return Err(Error::InvalidConfig("loss_newton_solve needs mode LossNewton".into()));
    }
    run(inst, x0, cfg, reference)
}

/// Dispatches on `cfg.mode`.
pub fn solve(
    inst: &ProblemInstance,
    x0: &Vector,
    cfg: &SolverConfig,
    reference: Option<&ReferenceOptimum>,
) -> Result<ConvergenceTrace> {
    run(inst, x0, cfg, reference)
}

fn run(
    inst: &ProblemInstance,
    x0: &Vector,
    cfg: &SolverConfig,
    reference: Option<&ReferenceOptimum>,
) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    inst.check_point(x0)?;
    let x_star = reference.map(ReferenceOptimum::x);
    if let Some(xs) = &x_star {
        inst.check_point(xs)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kind = cfg.step_kind();

    let mut trace = ConvergenceTrace::default();
    let mut x = x0.clone();
    let mut t = 0;
    loop {
        let cache = eval(inst, &x)?;
        let g = grad_l_reg(inst, &cache)?;
        let grad_norm = g.norm();
        let loss_gap = reference.map(|r| cache.loss_reg - r.l_min);
        let outside_ball = x.norm() > inst.radius;
        trace.ball_exit |= outside_ball;

        let mut record = IterRecord {
            t,
            x: x.clone(),
            loss_reg: cache.loss_reg,
            grad_norm,
            dist_to_opt: x_star.as_ref().map(|xs| (&x - xs).norm()),
            loss_gap,
            step_kind: kind,
            outside_ball,
            newton_decrement_sq: None,
        };

        let done = grad_norm <= cfg.grad_tol
            || (cfg.mode == SolverMode::LossNewton && loss_gap.is_some_and(|gap| gap <= cfg.eps));
        if done {
            trace.converged = true;
            trace.iterates.push(record);
            break;
        }
        if t == cfg.max_iters {
            trace.iterates.push(record);
            break;
        }

        let parts = build_hessian(inst, &cache)?;
        let exact_step = cholesky_solve(&parts.hess_l_reg, &g)
            .map_err(|e| Error::NotPd(format!("regularized Hessian at iteration {t}: {e}")))?;
        record.newton_decrement_sq = Some(g.dot(&exact_step));
        let step = match &cfg.sketch {
            None => exact_step,
            Some(sk) => {
                let sketched = sketch_with_rng(&parts.c_matrix, &parts.d_matrix, sk, &mut rng)?;
                cholesky_solve(&sketched.h_tilde, &g)
                    .map_err(|e| Error::NotPd(format!("sketched Hessian at iteration {t}: {e}")))?
            }
        };
        trace.iterates.push(record);
        x -= step * cfg.eta;
        t += 1;
    }
    trace.iterations_used = t;
    Ok(trace)
}

/// Iteration-count bound.
///
/// * approximate mode: `ceil(ln(dist0 / eps) / ln(1 / 0.4))`
/// * loss mode: `ceil(N^2 ln(gap0 / eps))`
pub fn predict_iterations(mode: SolverMode, start: f64, eps: f64, n_const: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::InvalidRange(format!("eps must be positive, got {eps}")));
    }
    let raw = match mode {
        SolverMode::ApproxNewton => {
            if !(start > eps) {
                return Err(Error::InvalidRange(format!("need dist0 > eps, got dist0={start}, eps={eps}")));
            }
            (start / eps).ln() / (1.0 / APPROX_NEWTON_RATE).ln()
        }
        SolverMode::LossNewton => {
            if !(start >= eps) {
                return Err(Error::InvalidRange(format!("need gap0 >= eps, got gap0={start}, eps={eps}")));
            }
            if !(n_const >= 1.0) {
                return Err(Error::InvalidRange(format!("need N >= 1, got {n_const}")));
            }
            n_const * n_const * (start / eps).ln()
        }
    };
    // Absorb last-ulp noise from ln so that exact integers do not round up.
    Ok((raw * (1.0 - 1e-12)).ceil().max(0.0) as usize)
}

/// Finds the minimizer of the regularized loss by exact Newton from several
/// starts (the reference point plus `restarts` uniform draws in the ball),
/// keeping the lowest loss among starts that reach `||g|| <= grad_tol`.
///
/// Steps are halved until the loss does not increase, so a start that lands
/// near a kink still makes progress; starts whose Hessian is singular are
/// dropped.
pub fn reference_optimum(inst: &ProblemInstance, restarts: usize, seed: u64, grad_tol: f64) -> Result<ReferenceOptimum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![inst.reference_point()];
    for _ in 0..restarts {
        starts.push(uniform_in_ball(&mut rng, inst.d, inst.radius));
    }

    let mut best: Option<ReferenceOptimum> = None;
    for x0 in starts {
        let Some(cand) = polish(inst, x0, grad_tol)? else { continue };
        if best.as_ref().is_none_or(|b| cand.l_min < b.l_min) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::NotPd("no restart reached a nondegenerate stationary point".into()))
}

fn polish(inst: &ProblemInstance, mut x: Vector, grad_tol: f64) -> Result<Option<ReferenceOptimum>> {
    for _ in 0..500 {
        let cache = eval(inst, &x)?;
        let g = grad_l_reg(inst, &cache)?;
        let gn = g.norm();
        if gn <= grad_tol {
            return Ok(Some(ReferenceOptimum { x_star: x.iter().copied().collect(), l_min: cache.loss_reg, grad_norm: gn }));
        }
        let h = build_hessian(inst, &cache)?.hess_l_reg;
        let Ok(p) = cholesky_solve(&h, &g) else { return Ok(None) };
        let mut step = 1.0;
        let mut next = &x - &p;
        let ceiling = cache.loss_reg + 4.0 * f64::EPSILON * cache.loss_reg.abs();
        while eval(inst, &next)?.loss_reg > ceiling && step > 1e-12 {
            step *= 0.5;
            next = &x - &p * step;
        }
        if next == x {
            return Ok(None);
        }
        x = next;
    }
    Ok(None)
}

/// Uniform draw from the radius-`r` ball: Gaussian direction, radius `r U^{1/d}`.
pub fn uniform_in_ball<R: rand::Rng + ?Sized>(rng: &mut R, d: usize, r: f64) -> Vector {
    let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let u: f64 = Uniform::new(0.0, 1.0).expect("valid range").sample(rng);
    let norm = dir.norm();
    if norm == 0.0 {
        return Vector::zeros(d);
    }
    dir * (r * u.powf(1.0 / d as f64) / norm)
}
