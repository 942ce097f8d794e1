//! C ABI over `srnewton`.
//!
//! Instances are opaque heap handles. Every fallible call returns an
//! [`SrnStatus`]; on failure a description is available from
//! [`srn_last_error`] on the same thread. Panics never cross the boundary.
//! Vectors are passed as `(pointer, length)` pairs of doubles and matrices as
//! row-major `d * d` buffers owned by the caller.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use srnewton::bounds::{verify_bounds_with, VerifyConfig};
use srnewton::instance::{choose_weights, generate_instance, ProblemInstance};
use srnewton::linalg::Vector;
use srnewton::sketch::SketchConfig;
use srnewton::solver::{reference_optimum, solve, SolverConfig};
use srnewton::{compute_bounds, eval, grad_l_reg, hessian, Error};

/// Result codes; zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotPd = 4,
    RankDeficient = 5,
    GenerationFailed = 6,
    Io = 7,
    Json = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrnMode {
    ApproxNewton = 0,
    LossNewton = 1,
}

/// Solver settings. `sketch_eps0 <= 0` disables sketching. A non-positive
/// `eta` selects the mode default (1, or 1/N for loss mode with `N` computed
/// from `l`).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrnSolveOptions {
    pub mode: SrnMode,
    pub eta: f64,
    pub max_iters: u64,
    pub grad_tol: f64,
    pub eps: f64,
    pub l: f64,
    pub sketch_eps0: f64,
    pub sketch_delta: f64,
    pub seed: u64,
}

/// Outcome of [`srn_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrnSolveSummary {
    pub iterations: u64,
    pub converged: bool,
    pub ball_exit: bool,
    pub final_loss_reg: f64,
    pub final_grad_norm: f64,
}

/// Opaque problem instance.
pub struct SrnInstance {
    inner: ProblemInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SrnStatus {
    match err {
        Error::Dimension(_) | Error::IndexOutOfRange { .. } => SrnStatus::Dimension,
        Error::NotPd(_) | Error::DegenerateC => SrnStatus::NotPd,
        Error::RankDeficient { .. } => SrnStatus::RankDeficient,
        Error::GenerationFailed { .. } => SrnStatus::GenerationFailed,
        Error::Io(_) => SrnStatus::Io,
        Error::Json(_) => SrnStatus::Json,
        Error::EmptyProbeSet | Error::ProbeOutsideBall { .. } | Error::InvalidRange(_) | Error::InvalidConfig(_) => {
            SrnStatus::InvalidArgument
        }
    }
}

enum Failure {
    Lib(Error),
    Status(SrnStatus, &'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F>(f: F) -> SrnStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrnStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_last_error(msg.to_string());
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SrnStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure::Status(SrnStatus::NullPointer, "null pointer argument")
}

unsafe fn instance<'a>(h: *const SrnInstance) -> Result<&'a ProblemInstance, Failure> {
    h.as_ref().map(|h| &h.inner).ok_or_else(null)
}

unsafe fn read_vec(inst: &ProblemInstance, x: *const f64, len: usize) -> Result<Vector, Failure> {
    if x.is_null() {
        return Err(null());
    }
    if len != inst.d {
        return Err(Error::Dimension(format!("vector has length {len}, expected {}", inst.d)).into());
    }
    Ok(Vector::from_column_slice(std::slice::from_raw_parts(x, len)))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

fn boxed(inner: ProblemInstance) -> *mut SrnInstance {
    Box::into_raw(Box::new(SrnInstance { inner }))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Status(SrnStatus::InvalidArgument, "string contains NUL"))
}

/// Message for the most recent failure on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn srn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn srn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates an instance with unit weights.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_generate(
    n: usize,
    m: usize,
    d: usize,
    radius: f64,
    seed: u64,
    target_theta: f64,
    out: *mut *mut SrnInstance,
) -> SrnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let inst = generate_instance(n, m, d, radius, seed, target_theta)?;
        write_out(out, boxed(inst))
    })
}

/// Returns a new instance with weights chosen for Hessian lower bound `l`.
///
/// # Safety
/// `inst` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_choose_weights(
    inst: *const SrnInstance,
    l: f64,
    margin: f64,
    out: *mut *mut SrnInstance,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        if out.is_null() {
            return Err(null());
        }
        write_out(out, boxed(choose_weights(inst, l, margin)?))
    })
}

/// Parses an instance from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_from_json(json: *const c_char, out: *mut *mut SrnInstance) -> SrnStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null());
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Failure::Status(SrnStatus::InvalidArgument, "JSON is not UTF-8"))?;
        write_out(out, boxed(ProblemInstance::from_json(s)?))
    })
}

/// Serializes an instance; free the result with [`srn_string_free`].
///
/// # Safety
/// `inst` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_to_json(inst: *const SrnInstance, out: *mut *mut c_char) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        if out.is_null() {
            return Err(null());
        }
        write_out(out, to_c_string(inst.to_json()?)?)
    })
}

/// Writes `n`, `m`, `d`. Any of the output pointers may be NULL.
///
/// # Safety
/// `inst` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_dims(
    inst: *const SrnInstance,
    n: *mut usize,
    m: *mut usize,
    d: *mut usize,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        for (p, v) in [(n, inst.n), (m, inst.m), (d, inst.d)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `inst` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn srn_instance_free(inst: *mut SrnInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Loss `L(x)` and regularized loss `L_reg(x)`. Either output may be NULL.
///
/// # Safety
/// `x` must point to `len` doubles; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn srn_eval_loss(
    inst: *const SrnInstance,
    x: *const f64,
    len: usize,
    loss: *mut f64,
    loss_reg: *mut f64,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        let cache = eval(inst, &read_vec(inst, x, len)?)?;
        if !loss.is_null() {
            loss.write(cache.loss);
        }
        if !loss_reg.is_null() {
            loss_reg.write(cache.loss_reg);
        }
        Ok(())
    })
}

/// Gradient of `L_reg` at `x` into `out[0..d]`.
///
/// # Safety
/// `x` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn srn_gradient(inst: *const SrnInstance, x: *const f64, len: usize, out: *mut f64) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        let cache = eval(inst, &read_vec(inst, x, len)?)?;
        let g = grad_l_reg(inst, &cache)?;
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(g.as_ptr(), out, len);
        Ok(())
    })
}

/// Hessian of `L_reg` at `x`, row-major into `out[0..d*d]`.
///
/// # Safety
/// `x` must point to `len` doubles and `out` to `len * len` doubles.
#[no_mangle]
pub unsafe extern "C" fn srn_hessian(inst: *const SrnInstance, x: *const f64, len: usize, out: *mut f64) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        let cache = eval(inst, &read_vec(inst, x, len)?)?;
        let h = hessian::hessian_l_reg(inst, &cache)?;
        if out.is_null() {
            return Err(null());
        }
        let dst = std::slice::from_raw_parts_mut(out, len * len);
        for i in 0..len {
            for j in 0..len {
                dst[i * len + j] = h[(i, j)];
            }
        }
        Ok(())
    })
}

/// Default options for `mode`.
#[no_mangle]
pub extern "C" fn srn_solve_options_default(mode: SrnMode) -> SrnSolveOptions {
    let cfg = match mode {
        SrnMode::ApproxNewton => SolverConfig::approx_newton(),
        SrnMode::LossNewton => SolverConfig::loss_newton(1.0),
    };
    SrnSolveOptions {
        mode,
        eta: 0.0,
        max_iters: cfg.max_iters as u64,
        grad_tol: cfg.grad_tol,
        eps: cfg.eps,
        l: 1.0,
        sketch_eps0: 0.0,
        sketch_delta: SketchConfig::default().delta,
        seed: 0,
    }
}

/// Runs a solver from `x0` and writes the final iterate into `x_out`.
///
/// # Safety
/// `x0` and `x_out` must each point to `len` doubles; `opts` and `summary`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn srn_solve(
    inst: *const SrnInstance,
    x0: *const f64,
    len: usize,
    opts: *const SrnSolveOptions,
    x_out: *mut f64,
    summary: *mut SrnSolveSummary,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        let x0 = read_vec(inst, x0, len)?;
        let opts = opts.as_ref().ok_or_else(null)?;
        if x_out.is_null() || summary.is_null() {
            return Err(null());
        }
        let mut cfg = match opts.mode {
            SrnMode::ApproxNewton => SolverConfig::approx_newton(),
            SrnMode::LossNewton => {
                if !(opts.l > 0.0) {
                    return Err(Error::InvalidConfig(format!("l must be positive, got {}", opts.l)).into());
                }
                SolverConfig::loss_newton(compute_bounds(inst, opts.l, inst.radius).n_const)
            }
        };
        if opts.eta > 0.0 {
            cfg.eta = opts.eta;
        }
        cfg.max_iters = usize::try_from(opts.max_iters).unwrap_or(usize::MAX);
        cfg.grad_tol = opts.grad_tol;
        cfg.eps = opts.eps;
        cfg.seed = opts.seed;
        if opts.sketch_eps0 > 0.0 {
            cfg.sketch = Some(SketchConfig {
                epsilon0: opts.sketch_eps0,
                delta: opts.sketch_delta,
                seed: opts.seed,
                ..Default::default()
            });
        }
        let trace = solve(inst, &x0, &cfg, None)?;
        let last = trace.last().expect("trace records the initial point");
        ptr::copy_nonoverlapping(last.x.as_ptr(), x_out, len);
        summary.write(SrnSolveSummary {
            iterations: trace.iterations_used as u64,
            converged: trace.converged,
            ball_exit: trace.ball_exit,
            final_loss_reg: last.loss_reg,
            final_grad_norm: last.grad_norm,
        });
        Ok(())
    })
}

/// Restarted exact Newton; writes the best stationary point and its loss.
///
/// # Safety
/// `x_out` must point to `d` doubles and `loss_out` be writable.
#[no_mangle]
pub unsafe extern "C" fn srn_reference_optimum(
    inst: *const SrnInstance,
    restarts: usize,
    seed: u64,
    grad_tol: f64,
    x_out: *mut f64,
    loss_out: *mut f64,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        if x_out.is_null() || loss_out.is_null() {
            return Err(null());
        }
        let r = reference_optimum(inst, restarts, seed, grad_tol)?;
        ptr::copy_nonoverlapping(r.x_star.as_ptr(), x_out, inst.d);
        loss_out.write(r.l_min);
        Ok(())
    })
}

/// Runs the bound checks. `all_passed` receives the verdict; when
/// `report_json` is non-NULL it receives the JSON report (free with
/// [`srn_string_free`]).
///
/// # Safety
/// `all_passed` must be writable; `report_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn srn_verify(
    inst: *const SrnInstance,
    samples: usize,
    seed: u64,
    l: f64,
    all_passed: *mut bool,
    report_json: *mut *mut c_char,
) -> SrnStatus {
    guard(|| {
        let inst = instance(inst)?;
        if all_passed.is_null() {
            return Err(null());
        }
        if !(l > 0.0) {
            return Err(Error::InvalidConfig(format!("l must be positive, got {l}")).into());
        }
        let report = verify_bounds_with(inst, &VerifyConfig::new(samples, seed, l));
        all_passed.write(report.all_passed());
        if !report_json.is_null() {
            report_json.write(to_c_string(report.to_json())?);
        }
        Ok(())
    })
}
