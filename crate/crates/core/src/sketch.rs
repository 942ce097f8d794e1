//! Spectral approximation of `C^T D C` by leverage-score row sampling.
//!
//! With `E = D^{1/2} C`, the form equals `E^T E = sum_i e_i e_i^T` over the
//! rows of `E`. Drawing `s` rows i.i.d. with probability proportional to their
//! leverage scores and reweighting each draw by `1 / (s p_i)` gives an unbiased
//! estimate that lands in `[(1 - eps0) H, (1 + eps0) H]` with probability at
//! least `1 - delta` once `s >= d ln(m / delta) / eps0^2` (matrix Chernoff).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_extreme_eigenvalues, sym_sqrt_pd, symmetrize, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub epsilon0: f64,
    pub delta: f64,
    /// Multiplier on the sample count `d ln(m / delta) / eps0^2`.
    pub oversample: f64,
    pub seed: u64,
    /// Take every row once with unit weight instead of sampling.
    pub exhaustive: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self { epsilon0: 0.01, delta: 0.05, oversample: 1.0, seed: 0, exhaustive: false }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon0 must lie in (0, 1), got {}", self.epsilon0)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.oversample >= 1.0) {
            return Err(Error::InvalidConfig(format!("oversample must be >= 1, got {}", self.oversample)));
        }
        Ok(())
    }

    /// `ceil(oversample * d ln(m / delta) / eps0^2)`, at least 1.
    pub fn sample_count(&self, m: usize, d: usize) -> usize {
        let s = self.oversample * d as f64 * (m as f64 / self.delta).ln() / (self.epsilon0 * self.epsilon0);
        (s.ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchResult {
    pub h_tilde: Mat,
    /// Number of draws (or `m` on the exhaustive path).
    pub rows_sampled: usize,
    /// Per-row weights `k_i / (s p_i)`; `H~ = E^T diag(weights) E`.
    pub row_weights: Vector,
    /// Extreme eigenvalues of `H^{-1/2} H~ H^{-1/2}`.
    pub sandwich_lo: f64,
    pub sandwich_hi: f64,
    pub sandwich_ok: bool,
}

/// Statistical leverage of each row of `e`: squared row norms of its left
/// singular vectors (nonzero singular values only).
pub fn leverage_scores(e: &Mat) -> Vector {
    let svd = e.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut tau = Vector::zeros(e.nrows());
    if !(smax > 0.0) {
        return tau;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > crate::linalg::RANK_RTOL * smax {
            for i in 0..e.nrows() {
                tau[i] += u[(i, k)] * u[(i, k)];
            }
        }
    }
    tau
}

/// Approximates `C^T D C` to a `(1 +- eps0)` spectral sandwich.
pub fn sketch_pd_form(c_matrix: &Mat, d_matrix: &Mat, cfg: &SketchConfig) -> Result<SketchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sketch_with_rng(c_matrix, d_matrix, cfg, &mut rng)
}

pub(crate) fn sketch_with_rng<R: Rng + ?Sized>(
    c_matrix: &Mat,
    d_matrix: &Mat,
    cfg: &SketchConfig,
    rng: &mut R,
) -> Result<SketchResult> {
    cfg.validate()?;
    let (m, d) = c_matrix.shape();
    if d_matrix.shape() != (m, m) {
        return Err(Error::Dimension(format!("D is {:?}, expected {m}x{m}", d_matrix.shape())));
    }
    if m < d {
        return Err(Error::Dimension(format!("sketching needs m >= d, got m={m}, d={d}")));
    }
    let asym = (d_matrix - d_matrix.transpose()).amax();
    if asym > 1e-10 * d_matrix.amax().max(1.0) {
        return Err(Error::NotPd(format!("D is not symmetric (asymmetry {asym:e})")));
    }

    let e = sym_sqrt_pd(d_matrix)? * c_matrix;
    let exact = symmetrize(&(e.transpose() * &e));

    let row_weights = if cfg.exhaustive {
        Vector::from_element(m, 1.0)
    } else {
        let tau = leverage_scores(&e);
        let total = tau.sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateC);
        }
        let p = &tau / total;
        let s = cfg.sample_count(m, d);
        let dist = WeightedIndex::new(p.iter().copied()).map_err(|_| Error::DegenerateC)?;
        let mut counts = vec![0usize; m];
        for _ in 0..s {
            counts[dist.sample(rng)] += 1;
        }
        Vector::from_fn(m, |i, _| if counts[i] == 0 { 0.0 } else { counts[i] as f64 / (s as f64 * p[i]) })
    };
    let rows_sampled = if cfg.exhaustive { m } else { cfg.sample_count(m, d) };

    let mut weighted = e.clone();
    for (i, &wt) in row_weights.iter().enumerate() {
        weighted.row_mut(i).scale_mut(wt);
    }
    let h_tilde = symmetrize(&(e.transpose() * weighted));

    let chol = exact.clone().cholesky().ok_or(Error::DegenerateC)?;
    let l_inv = chol.l().try_inverse().ok_or(Error::DegenerateC)?;
    let whitened = &l_inv * &h_tilde * l_inv.transpose();
    let (sandwich_lo, sandwich_hi) = sym_extreme_eigenvalues(&whitened);
    let sandwich_ok = sandwich_lo >= 1.0 - cfg.epsilon0 && sandwich_hi <= 1.0 + cfg.epsilon0;

    Ok(SketchResult { h_tilde, rows_sampled, row_weights, sandwich_lo, sandwich_hi, sandwich_ok })
}
