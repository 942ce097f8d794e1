//! Theoretical constants for the model and their empirical verification.
//!
//! Every constant is evaluated at `R_eff = max(||A1||, ||A2||, probe radius)`
//! rather than at a nominal radius: the constants are monotone in the radius,
//! and at `R > 4` the exponential factors make every check vacuous.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::derivatives::{grad_l, grad_l_reg};
use crate::forward::{eval, EvalCache};
use crate::hessian::{build_hessian, hessian_entry, hessian_six_term, HessianParts};
use crate::instance::{weight_threshold, ProblemInstance};
use crate::linalg::{is_full_rank, rel_frobenius, sigma_min, spectral_norm, sym_extreme_eigenvalues, Mat, Vector};
use crate::oracle::{fd_gradient, fd_hessian, kink_distance, FD_GRAD_STEP, FD_HESS_STEP};
use crate::solver::uniform_in_ball;

pub const F_NORM_BOUND: f64 = 1.0;
pub const C_NORM_BOUND: f64 = 2.0;
pub const B_NORM_BOUND: f64 = 16.0;
pub const B_PSD_BOUND: f64 = 20.0;

/// Relative slack on the PD lower bound `l`.
pub const PD_REL_SLACK: f64 = 1e-8;
pub const GRADIENT_FD_RTOL: f64 = 1e-6;
pub const HESSIAN_FD_RTOL: f64 = 5e-3;
pub const DECOMPOSITION_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalBounds {
    pub r_eff: f64,
    /// `R^2` bound on `||h(x)||`
    pub h_bound: f64,
    /// `sqrt(m) exp(R^3)` bound on `||u(x)||`
    pub u_bound: f64,
    /// `exp(-R^3)` lower bound on `alpha(x)`
    pub beta_bound: f64,
    pub f_bound: f64,
    pub c_bound: f64,
    pub b_norm_bound: f64,
    pub b_psd_bound: f64,
    /// Hessian Lipschitz constant `m^1.5 sqrt(nd) exp(5 R^3)`
    pub lipschitz_m: f64,
    pub pd_l: f64,
    /// `max_i w_i^2`
    pub w_sq_max: f64,
    /// `R^4 (16 + w_sq_max) / l`, bound on `||H(x)^{-1} H(y)||`
    pub n_const: f64,
    /// Softmax Lipschitz constant `2 R^2 m^1.5 sqrt(nd) exp(4 R^3)`
    pub f_lip: f64,
    /// Names of fields clamped to `f64::MAX` because the exponential overflowed.
    pub saturated: Vec<String>,
    /// `n_const < 1`, which would make `1 - 1/N^2` negative.
    pub n_const_below_one: bool,
}

fn saturate(name: &str, v: f64, saturated: &mut Vec<String>) -> f64 {
    if v.is_finite() {
        v
    } else {
        saturated.push(name.to_owned());
        f64::MAX
    }
}

pub fn compute_bounds(inst: &ProblemInstance, l: f64, probe_radius: f64) -> TheoreticalBounds {
    let r = spectral_norm(&inst.a1).max(spectral_norm(&inst.a2)).max(probe_radius);
    let (n, m, d) = (inst.n as f64, inst.m as f64, inst.d as f64);
    let r3 = r.powi(3);
    let poly = m.powf(1.5) * (n * d).sqrt();
    let w_sq_max = inst.w_sq_max();
    let n_const = r.powi(4) * (16.0 + w_sq_max) / l;
    let mut saturated = Vec::new();

    TheoreticalBounds {
        r_eff: r,
        h_bound: r * r,
        u_bound: saturate("u_bound", m.sqrt() * r3.exp(), &mut saturated),
        beta_bound: (-r3).exp(),
        f_bound: F_NORM_BOUND,
        c_bound: C_NORM_BOUND,
        b_norm_bound: B_NORM_BOUND,
        b_psd_bound: B_PSD_BOUND,
        lipschitz_m: saturate("lipschitz_m", poly * (5.0 * r3).exp(), &mut saturated),
        pd_l: l,
        w_sq_max,
        n_const,
        f_lip: saturate("f_lip", 2.0 * r * r * poly * (4.0 * r3).exp(), &mut saturated),
        saturated,
        n_const_below_one: n_const < 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Assertions evaluated (skipped points excluded).
    pub samples: usize,
    pub passes: usize,
    /// Points where the hypothesis of the check did not hold.
    pub skipped: usize,
    /// Smallest `bound - value` (oriented so negative means violation).
    pub worst_margin: Option<f64>,
    /// Largest `empirical / theoretical`.
    pub worst_ratio: Option<f64>,
    pub theoretical_constant: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.passes == self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub note: String,
    pub samples: usize,
    pub pairs: usize,
    pub seed: u64,
    pub bounds: TheoreticalBounds,
    /// Sorted by name.
    pub checks: Vec<CheckResult>,
}

impl BoundsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub samples: usize,
    /// Point pairs for the Lipschitz and Hessian-ratio checks.
    pub pairs: usize,
    pub seed: u64,
    pub l: f64,
    /// Include the finite-difference and decomposition cross-checks.
    pub cross_checks: bool,
}

impl VerifyConfig {
    pub fn new(samples: usize, seed: u64, l: f64) -> Self {
        Self { samples, pairs: samples, seed, l, cross_checks: true }
    }
}

#[derive(Debug, Clone)]
struct Acc {
    name: &'static str,
    constant: f64,
    samples: usize,
    passes: usize,
    skipped: usize,
    worst_margin: Option<f64>,
    worst_ratio: Option<f64>,
}

impl Acc {
    fn new(name: &'static str, constant: f64) -> Self {
        Self { name, constant, samples: 0, passes: 0, skipped: 0, worst_margin: None, worst_ratio: None }
    }

    fn record(&mut self, margin: f64, ratio: f64) {
        self.samples += 1;
        if margin >= 0.0 {
            self.passes += 1;
        }
        self.worst_margin = Some(self.worst_margin.map_or(margin, |w| w.min(margin)));
        self.worst_ratio = Some(self.worst_ratio.map_or(ratio, |w| w.max(ratio)));
    }

    /// `value <= bound`
    fn upper(&mut self, value: f64, bound: f64) {
        self.record(bound - value, value / bound);
    }

    /// `value >= bound`
    fn lower(&mut self, value: f64, bound: f64) {
        self.record(value - bound, bound / value);
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_owned(),
            samples: self.samples,
            passes: self.passes,
            skipped: self.skipped,
            worst_margin: self.worst_margin,
            worst_ratio: self.worst_ratio,
            theoretical_constant: self.constant,
        }
    }
}

/// Per-point quantities, computed independently (and in parallel) per sample.
struct PointData {
    cache: EvalCache,
    parts: HessianParts,
    /// Lower bound `l` is guaranteed here: `C` has full column rank and the
    /// weights clear `20 + l / sigma_min(C)^2`.
    pd_hypothesis: bool,
    kink: f64,
}

fn point_data(inst: &ProblemInstance, x: &Vector, l: f64) -> PointData {
    let cache = eval(inst, x).expect("sample has instance dimension");
    let parts = build_hessian(inst, &cache).expect("cache matches instance");
    let c = &parts.c_matrix;
    let pd_hypothesis = inst.m >= inst.d
        && is_full_rank(c)
        && inst.w_sq_min() >= weight_threshold(sigma_min(c), l);
    PointData { kink: kink_distance(inst, x), cache, parts, pd_hypothesis }
}

struct CrossChecks {
    grad_err: Option<f64>,
    grad_reg_err: Option<f64>,
    hess_err: Option<f64>,
    decomposition_err: f64,
}

fn cross_checks(inst: &ProblemInstance, p: &PointData) -> CrossChecks {
    let x = &p.cache.x;
    let (grad_err, grad_reg_err) = if p.kink >= 10.0 * FD_GRAD_STEP {
        let g = grad_l(inst, &p.cache).expect("cache matches instance");
        let gr = grad_l_reg(inst, &p.cache).expect("cache matches instance");
        let fd = fd_gradient(|y| eval(inst, y).expect("dimension").loss, x, FD_GRAD_STEP);
        let fdr = fd_gradient(|y| eval(inst, y).expect("dimension").loss_reg, x, FD_GRAD_STEP);
        (Some(gradient_rel_err(&g, &fd)), Some(gradient_rel_err(&gr, &fdr)))
    } else {
        (None, None)
    };
    let hess_err = if p.kink >= 10.0 * FD_HESS_STEP && p.parts.hess_l.norm() > 0.0 {
        let fd = fd_hessian(
            |y| grad_l(inst, &eval(inst, y).expect("dimension")).expect("cache matches instance"),
            x,
            FD_HESS_STEP,
        );
        Some(rel_frobenius(&p.parts.hess_l, &fd))
    } else {
        None
    };
    let mut decomposition_err: f64 = 0.0;
    for i in 0..inst.d {
        for j in 0..inst.d {
            let e = hessian_entry(inst, &p.cache, i, j).expect("index in range");
            let s = hessian_six_term(inst, &p.cache, i, j).expect("index in range");
            let a = p.parts.hess_l[(i, j)];
            let scale = 1.0 + e.abs();
            decomposition_err = decomposition_err.max((e - s).abs() / scale).max((e - a).abs() / scale).max((s - a).abs() / scale);
        }
    }
    CrossChecks { grad_err, grad_reg_err, hess_err, decomposition_err }
}

/// `||g - fd|| / ||g||`, with both vanishing counted as exact agreement.
pub fn gradient_rel_err(g: &Vector, fd: &Vector) -> f64 {
    let diff = (g - fd).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / g.norm().max(f64::MIN_POSITIVE)
    }
}

/// Draws uniform points in the `R_eff` ball and checks every bound at each.
pub fn verify_bounds(inst: &ProblemInstance, samples: usize, seed: u64, l: f64) -> BoundsReport {
    verify_bounds_with(inst, &VerifyConfig::new(samples, seed, l))
}

pub fn verify_bounds_with(inst: &ProblemInstance, cfg: &VerifyConfig) -> BoundsReport {
    let samples = cfg.samples.max(1);
    let bounds = compute_bounds(inst, cfg.l, inst.radius);
    let r = bounds.r_eff;
    let a1_norm = spectral_norm(&inst.a1);

    // All randomness is drawn up front so results do not depend on scheduling.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vector> = (0..samples).map(|_| uniform_in_ball(&mut rng, inst.d, r)).collect();
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let pair_draws: Vec<(usize, Vector, f64, f64)> = (0..cfg.pairs)
        .map(|k| {
            let dir = uniform_in_ball(&mut rng, inst.d, 1.0);
            let dir = if dir.norm() > 0.0 { dir.normalize() } else { Vector::from_element(inst.d, 1.0).normalize() };
            (k % samples, dir, unit.sample(&mut rng), unit.sample(&mut rng))
        })
        .collect();

    let data: Vec<PointData> = points.par_iter().map(|x| point_data(inst, x, cfg.l)).collect();
    let cross: Vec<Option<CrossChecks>> = data
        .par_iter()
        .map(|p| cfg.cross_checks.then(|| cross_checks(inst, p)))
        .collect();

    let mut h_norm = Acc::new("h_norm", bounds.h_bound);
    let mut u_norm = Acc::new("u_norm", bounds.u_bound);
    let mut alpha = Acc::new("alpha_lower_bound", bounds.beta_bound);
    let mut f_norm = Acc::new("f_norm", F_NORM_BOUND);
    let mut c_norm = Acc::new("c_norm", C_NORM_BOUND);
    let mut b_norm = Acc::new("b_norm", B_NORM_BOUND);
    let mut b_spec = Acc::new("b_spectrum", B_PSD_BOUND);
    let mut pd = Acc::new("hessian_pd", cfg.l * (1.0 - PD_REL_SLACK));
    let mut grad_fd = Acc::new("gradient_fd", GRADIENT_FD_RTOL);
    let mut hess_fd = Acc::new("hessian_fd", HESSIAN_FD_RTOL);
    let mut decomp = Acc::new("hessian_decomposition", DECOMPOSITION_RTOL);

    for (p, cc) in data.iter().zip(&cross) {
        let cache = &p.cache;
        h_norm.upper(cache.hidden.norm(), bounds.h_bound);
        match (&cache.u, cache.alpha) {
            (Some(u), Some(a)) => {
                u_norm.upper(u.norm(), bounds.u_bound);
                alpha.lower(a, bounds.beta_bound);
            }
            _ => {
                u_norm.skip();
                alpha.skip();
            }
        }
        f_norm.upper(cache.softmax.norm(), F_NORM_BOUND);
        c_norm.upper(cache.residual.norm(), C_NORM_BOUND);
        b_norm.upper(spectral_norm(&p.parts.b_total), B_NORM_BOUND);
        let (lo, hi) = sym_extreme_eigenvalues(&p.parts.b_total);
        b_spec.record((lo + B_PSD_BOUND).min(B_PSD_BOUND - hi), lo.abs().max(hi.abs()) / B_PSD_BOUND);
        if p.pd_hypothesis {
            let (lmin, _) = sym_extreme_eigenvalues(&p.parts.hess_l_reg);
            pd.lower(lmin, cfg.l * (1.0 - PD_REL_SLACK));
        } else {
            pd.skip();
        }
        if let Some(cc) = cc {
            for err in [cc.grad_err, cc.grad_reg_err] {
                match err {
                    Some(e) => grad_fd.upper(e, GRADIENT_FD_RTOL),
                    None => grad_fd.skip(),
                }
            }
            match cc.hess_err {
                Some(e) => hess_fd.upper(e, HESSIAN_FD_RTOL),
                None => hess_fd.skip(),
            }
            decomp.upper(cc.decomposition_err, DECOMPOSITION_RTOL);
        }
    }

    let mut hess_lip = Acc::new("hessian_lipschitz", bounds.lipschitz_m);
    let mut f_lip = Acc::new("f_lipschitz", bounds.f_lip);
    let mut ratio = Acc::new("hessian_ratio", bounds.n_const);

    let pair_results: Vec<PairOutcome> = pair_draws
        .par_iter()
        .enumerate()
        .map(|(k, (base, dir, bold, safe))| {
            let p = &data[*base];
            let partner = &data[(*base + 1 + k / samples) % samples];
            pair_outcome(inst, p, partner, dir, *bold, *safe, r, a1_norm)
        })
        .collect();
    for o in pair_results {
        match o.same_state {
            Some((dh, df, dx)) => {
                hess_lip.upper(dh / dx, bounds.lipschitz_m);
                f_lip.upper(df / dx, bounds.f_lip);
            }
            None => {
                hess_lip.skip();
                f_lip.skip();
            }
        }
        match o.hessian_ratio {
            Some(v) => ratio.upper(v, bounds.n_const),
            None => ratio.skip(),
        }
    }

    let mut checks: Vec<CheckResult> = [h_norm, u_norm, alpha, f_norm, c_norm, b_norm, b_spec, pd, hess_lip, f_lip, ratio]
        .into_iter()
        .chain(cfg.cross_checks.then_some([grad_fd, hess_fd, decomp]).into_iter().flatten())
        .map(Acc::finish)
        .collect();
    checks.sort_by(|a, b| a.name.cmp(&b.name));

    BoundsReport {
        note: format!(
            "constants evaluated at R_eff = max(||A1||, ||A2||, radius) = {r} in place of a nominal radius"
        ),
        samples,
        pairs: cfg.pairs,
        seed: cfg.seed,
        bounds,
        checks,
    }
}

struct PairOutcome {
    /// `(||hess L(x) - hess L(y)||, ||f(x) - f(y)||, ||x - y||)` for a same-state pair.
    same_state: Option<(f64, f64, f64)>,
    hessian_ratio: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn pair_outcome(
    inst: &ProblemInstance,
    p: &PointData,
    partner: &PointData,
    dir: &Vector,
    bold: f64,
    safe: f64,
    r: f64,
    a1_norm: f64,
) -> PairOutcome {
    let x = &p.cache.x;
    let room = (r - x.norm()).max(0.0);
    // First try a long step, then one short enough that no pre-activation changes sign.
    let long = x + dir * (bold * 0.5 * r).min(room);
    let short = x + dir * (safe * 0.9 * p.kink / a1_norm.max(f64::MIN_POSITIVE)).min(room);
    let same_state = [long, short].into_iter().find_map(|y| {
        let dx = (&y - x).norm();
        if dx == 0.0 {
            return None;
        }
        let cy = eval(inst, &y).expect("dimension");
        if cy.indicator != p.cache.indicator {
            return None;
        }
        let hy = build_hessian(inst, &cy).expect("cache matches instance").hess_l;
        Some((spectral_norm(&(&p.parts.hess_l - hy)), (&p.cache.softmax - &cy.softmax).norm(), dx))
    });

    let hessian_ratio = (p.pd_hypothesis && partner.pd_hypothesis).then(|| {
        let hx_inv = p
            .parts
            .hess_l_reg
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| Mat::from_element(inst.d, inst.d, f64::INFINITY));
        spectral_norm(&(hx_inv * &partner.parts.hess_l_reg))
    });
    PairOutcome { same_state, hessian_ratio }
}
