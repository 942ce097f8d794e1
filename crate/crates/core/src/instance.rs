//! Problem instances: generation, validation against the model's structural
//! assumptions, regularization weights and the JSON file format.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{c_matrix_for_indicator, indicator, masked_product};
use crate::linalg::{cholesky_solve, is_full_rank, mat_from_rows, mat_to_rows, sigma_min, spectral_norm, Mat, Vector};

/// Generated operator norms and target norm sit at this fraction of the radius.
pub const GENERATION_SCALE: f64 = 0.9;

/// Lower bound on the curvature of `B(x)`; weights must clear it.
pub const B_CURVATURE_FLOOR: f64 = 20.0;

/// Minimum `|cos|` between a generated row of `A1` and the reference direction.
pub const ROW_MARGIN: f64 = 0.05;

const GENERATION_ATTEMPTS: usize = 64;

/// One regression problem `min_x 1/2 ||softmax(A2 relu(A1 x)) - b||^2 + 1/2 ||W C x||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub radius: f64,
    /// n x d
    pub a1: Mat,
    /// m x n
    pub a2: Mat,
    pub b: Vector,
    pub w: Vector,
    pub seed: u64,
}

impl ProblemInstance {
    /// Builds an instance after checking shapes. Norm conditions are not
    /// enforced here; see [`ProblemInstance::invariant_violations`].
    pub fn new(a1: Mat, a2: Mat, b: Vector, w: Vector, radius: f64, seed: u64) -> Result<Self> {
        let (n, d) = a1.shape();
        let m = a2.nrows();
        if a2.ncols() != n {
            return Err(Error::Dimension(format!("a2 is {}x{}, expected {m}x{n}", m, a2.ncols())));
        }
        if b.len() != m || w.len() != m {
            return Err(Error::Dimension(format!(
                "b and w must have length {m} (got {} and {})",
                b.len(),
                w.len()
            )));
        }
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::Dimension("n, m, d must be positive".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { n, m, d, radius, a1, a2, b, w, seed })
    }

    /// Human-readable list of violated norm/weight conditions (empty when conforming).
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n1 = spectral_norm(&self.a1);
        let n2 = spectral_norm(&self.a2);
        if n1 > self.radius {
            out.push(format!("||A1|| = {n1} exceeds radius {}", self.radius));
        }
        if n2 > self.radius {
            out.push(format!("||A2|| = {n2} exceeds radius {}", self.radius));
        }
        if self.b.norm() > 1.0 {
            out.push(format!("||b|| = {} exceeds 1", self.b.norm()));
        }
        if self.w.iter().any(|&wi| !(wi > 0.0)) {
            out.push("some regularization weight is not positive".into());
        }
        out
    }

    /// Canonical interior point `(radius / 2) * 1_d / sqrt(d)` at which the
    /// generator guarantees ReLU activity and `choose_weights` measures `C`.
    pub fn reference_point(&self) -> Vector {
        Vector::from_element(self.d, 0.5 * self.radius / (self.d as f64).sqrt())
    }

    /// `C = A2 diag(1[A1 x]) A1` at `x`.
    pub fn c_matrix_at(&self, x: &Vector) -> Result<Mat> {
        self.check_point(x)?;
        Ok(c_matrix_for_indicator(self, &indicator(&(&self.a1 * x))))
    }

    /// The scalar `max_i w_i^2` used in the Hessian-ratio constant.
    pub fn w_sq_max(&self) -> f64 {
        self.w.iter().map(|w| w * w).fold(0.0, f64::max)
    }

    pub fn w_sq_min(&self) -> f64 {
        self.w.iter().map(|w| w * w).fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!("x has length {}, expected {}", x.len(), self.d)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout. `serde_json` writes doubles in shortest round-trip form,
/// so reading back reproduces every entry bit for bit.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    m: usize,
    d: usize,
    radius: f64,
    a1: Vec<Vec<f64>>,
    a2: Vec<Vec<f64>>,
    b: Vec<f64>,
    w: Vec<f64>,
    seed: u64,
}

impl From<&ProblemInstance> for InstanceFile {
    fn from(inst: &ProblemInstance) -> Self {
        Self {
            n: inst.n,
            m: inst.m,
            d: inst.d,
            radius: inst.radius,
            a1: mat_to_rows(&inst.a1),
            a2: mat_to_rows(&inst.a2),
            b: inst.b.iter().copied().collect(),
            w: inst.w.iter().copied().collect(),
            seed: inst.seed,
        }
    }
}

impl TryFrom<InstanceFile> for ProblemInstance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        let a1 = mat_from_rows(&f.a1)?;
        let a2 = mat_from_rows(&f.a2)?;
        let inst = ProblemInstance::new(a1, a2, Vector::from_vec(f.b), Vector::from_vec(f.w), f.radius, f.seed)?;
        if (inst.n, inst.m, inst.d) != (f.n, f.m, f.d) {
            return Err(Error::Dimension(format!(
                "declared (n, m, d) = ({}, {}, {}) but matrices imply ({}, {}, {})",
                f.n, f.m, f.d, inst.n, inst.m, inst.d
            )));
        }
        Ok(inst)
    }
}

/// Diagnostics for the rank, activity and weight conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub a1_full_rank: bool,
    pub a2_full_rank: bool,
    /// `n / max(m, d)`
    pub xi: f64,
    /// Smallest active fraction `||1[A1 x]||_1 / n` over the probe set.
    pub theta: f64,
    /// `sigma_min(C)` at the first probe point.
    pub sigma_min_c: f64,
    /// Per-coordinate minimum of `w_i^2`.
    pub w_threshold: Vec<f64>,
    pub fixed_relu_state: bool,
    pub pd_lower_bound_l: f64,
}

impl AssumptionReport {
    /// Full rank, `xi > 1` and `theta > 1 / xi`.
    pub fn rank_condition_holds(&self) -> bool {
        self.a1_full_rank && self.a2_full_rank && self.xi > 1.0 && self.theta > 1.0 / self.xi
    }

    pub fn weights_hold(&self, inst: &ProblemInstance) -> bool {
        inst.w.iter().zip(&self.w_threshold).all(|(w, t)| w * w >= *t)
    }
}

/// Minimum squared weight that makes `C^T (B + W^2) C >= l I` given `sigma_min(C)`.
pub fn weight_threshold(sigma_min_c: f64, l: f64) -> f64 {
    if sigma_min_c > 0.0 {
        B_CURVATURE_FLOOR + l / (sigma_min_c * sigma_min_c)
    } else {
        f64::INFINITY
    }
}

/// Draws a random instance with `||A1|| = ||A2|| = 0.9 radius`, `||b|| = 0.9`,
/// unit weights and at least `ceil(target_theta * n)` active ReLU units at the
/// reference point.
///
/// Rows of `A1` that are inactive at the reference point are sign-flipped
/// (which preserves the Gaussian law and the singular values) until the
/// activity target is met. Rows whose angle to the reference direction is
/// within `ROW_MARGIN` of a right angle are tilted along that direction, so the
/// whole ray through the reference point keeps a relative kink margin.
///
/// The target is not drawn independently: it is the norm-0.9 vector that makes
/// the first-order descent direction of the loss at the origin, restricted to
/// the reference state, point along the reference ray. The regularized
/// minimizer then lies on that ray, strictly inside one ReLU region. Draws
/// whose `A1`, `A2`, `C` lose rank are rejected and redrawn.
pub fn generate_instance(
    n: usize,
    m: usize,
    d: usize,
    radius: f64,
    seed: u64,
    target_theta: f64,
) -> Result<ProblemInstance> {
    if m == 0 || d == 0 || n < 2 * m.max(d) {
        return Err(Error::Dimension(format!("need n >= 2 max(m, d) with m, d > 0; got n={n}, m={m}, d={d}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {radius}")));
    }
    if !(target_theta > 0.0 && target_theta < 1.0) {
        return Err(Error::InvalidConfig(format!("target_theta must lie in (0, 1), got {target_theta}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let required = (target_theta * n as f64).ceil() as usize;
    let x_ref = Vector::from_element(d, 0.5 * radius / (d as f64).sqrt());
    let dir = Vector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut last_reason = String::new();

    for _ in 0..GENERATION_ATTEMPTS {
        let mut a1 = gaussian_matrix(&mut rng, n, d);
        let a2 = gaussian_matrix(&mut rng, m, n);

        let z = &a1 * &x_ref;
        let active = z.iter().filter(|&&v| v > 0.0).count();
        if active < required {
            let mut inactive: Vec<usize> = (0..n).filter(|&k| z[k] <= 0.0).collect();
            inactive.shuffle(&mut rng);
            for &k in inactive.iter().take(required - active) {
                a1.row_mut(k).neg_mut();
            }
        }
        for k in 0..n {
            let row_norm = a1.row(k).norm();
            let along = a1.row(k).dot(&dir.transpose());
            if along.abs() < ROW_MARGIN * row_norm {
                let target = if along > 0.0 { ROW_MARGIN * row_norm } else { -ROW_MARGIN * row_norm };
                let mut row = a1.row_mut(k);
                row += dir.transpose() * (target - along);
            }
        }
        if !is_full_rank(&a1) || !is_full_rank(&a2) {
            last_reason = "A1 or A2 rank deficient".into();
            continue;
        }

        let a1 = &a1 * (GENERATION_SCALE * radius / spectral_norm(&a1));
        let a2 = &a2 * (GENERATION_SCALE * radius / spectral_norm(&a2));
        let c = masked_product(&a1, &a2, &indicator(&(&a1 * &x_ref)));
        if !is_full_rank(&c) {
            last_reason = "C rank deficient at the reference point".into();
            continue;
        }
        let Some(b) = aligned_target(&c, &x_ref) else {
            last_reason = "softmax-centred C is singular".into();
            continue;
        };
        return ProblemInstance::new(a1, a2, b, Vector::from_element(m, 1.0), radius, seed);
    }
    Err(Error::GenerationFailed { attempts: GENERATION_ATTEMPTS, reason: last_reason })
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    // Row-major fill so the draw order matches the serialized layout.
    let mut a = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    a
}

/// `b = 0.9 u / ||u||` with `u = P C (C^T P C)^{-1} C^T C x_ref` and
/// `P = I - 11^T / m`. At the origin the loss gradient along the reference
/// state is `-(1/m) C^T P b`, which is then proportional to `-C^T C x_ref`.
fn aligned_target(c: &Mat, x_ref: &Vector) -> Option<Vector> {
    let m = c.nrows();
    let centred = c - Mat::from_fn(m, c.ncols(), |_, j| c.column(j).mean());
    let gram = centred.transpose() * &centred;
    let y = cholesky_solve(&gram, &(c.transpose() * (c * x_ref))).ok()?;
    let u = centred * y;
    let un = u.norm();
    if !(un > 0.0) || !un.is_finite() {
        return None;
    }
    Some(u * (GENERATION_SCALE / un))
}

/// Checks rank, activity, fixed-ReLU-state (on the finite probe set) and
/// weight conditions.
pub fn validate_assumptions(inst: &ProblemInstance, probe_points: &[Vector], l: f64) -> Result<AssumptionReport> {
    if probe_points.is_empty() {
        return Err(Error::EmptyProbeSet);
    }
    for (index, x) in probe_points.iter().enumerate() {
        inst.check_point(x)?;
        let norm = x.norm();
        if norm > inst.radius {
            return Err(Error::ProbeOutsideBall { index, norm, radius: inst.radius });
        }
    }

    let indicators: Vec<Vector> = probe_points.iter().map(|x| indicator(&(&inst.a1 * x))).collect();
    let theta = indicators
        .iter()
        .map(|ind| ind.sum() / inst.n as f64)
        .fold(f64::INFINITY, f64::min);
    let fixed_relu_state = indicators.iter().all(|ind| ind == &indicators[0]);
    let sigma_min_c = sigma_min(&c_matrix_for_indicator(inst, &indicators[0]));

    Ok(AssumptionReport {
        a1_full_rank: is_full_rank(&inst.a1),
        a2_full_rank: is_full_rank(&inst.a2),
        xi: inst.n as f64 / inst.m.max(inst.d) as f64,
        theta,
        sigma_min_c,
        w_threshold: vec![weight_threshold(sigma_min_c, l); inst.m],
        fixed_relu_state,
        pd_lower_bound_l: l,
    })
}

/// Uniform weights `w_i = sqrt(20 + l / sigma_min(C)^2 + margin)` with `C` taken
/// at the reference point.
pub fn choose_weights(inst: &ProblemInstance, l: f64, margin: f64) -> Result<ProblemInstance> {
    if !(l > 0.0) || !(margin >= 0.0) {
        return Err(Error::InvalidConfig(format!("need l > 0 and margin >= 0, got l={l}, margin={margin}")));
    }
    let sigma = sigma_min(&inst.c_matrix_at(&inst.reference_point())?);
    if !(sigma > 0.0) {
        return Err(Error::RankDeficient { sigma_min: sigma });
    }
    let wi = (weight_threshold(sigma, l) + margin).sqrt();
    Ok(ProblemInstance { w: Vector::from_element(inst.m, wi), ..inst.clone() })
}
