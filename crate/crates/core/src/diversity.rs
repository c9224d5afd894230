//! Audits of the identifiability preconditions on `P` and `Pi`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nnls, numerical_rank};
use crate::rng;
use crate::stochastic::StochasticMatrix;

pub const RANK_TOL: f64 = 1e-9;
pub const SEPARABILITY_TOL: f64 = 1e-6;
/// NNLS residual tolerance for exact policy matrices.
pub const CONE_TOL_EXACT: f64 = 1e-8;
/// NNLS residual tolerance for estimated policy matrices.
pub const CONE_TOL_ESTIMATED: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedSufficient,
    Plausible,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityOptions {
    pub rank_tol: f64,
    pub separability_tol: f64,
    pub cone_tol: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for DiversityOptions {
    fn default() -> Self {
        Self {
            rank_tol: RANK_TOL,
            separability_tol: SEPARABILITY_TOL,
            cone_tol: CONE_TOL_EXACT,
            num_samples: 2000,
            seed: 0,
        }
    }
}

impl DiversityOptions {
    /// Looser tolerances for policies fitted from samples.
    pub fn estimated() -> Self {
        Self {
            rank_tol: 1e-3,
            separability_tol: 0.05,
            cone_tol: CONE_TOL_ESTIMATED,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rank_p: usize,
    pub rank_pi: usize,
    pub separable: bool,
    pub mc_pass_rate: f64,
    pub verdict: Verdict,
    pub options: DiversityOptions,
}

/// Numerical rank (singular values above `tol` times the largest) and
/// whether it reaches `k`.
pub fn check_rank(m: &DMatrix<f64>, k: usize, tol: f64) -> Result<(usize, bool)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank tolerance must be positive, got {tol}")));
    }
    let r = numerical_rank(m, tol)?;
    Ok((r, r >= k))
}

/// Every unit vector `e_a` has some column within max-abs `tol`.
pub fn check_separability(pi: &StochasticMatrix, tol: f64) -> bool {
    let m = pi.as_matrix();
    (0..m.nrows()).all(|a| {
        m.column_iter().any(|c| {
            c.iter()
                .enumerate()
                .all(|(i, &v)| (v - if i == a { 1.0 } else { 0.0 }).abs() <= tol)
        })
    })
}

/// Draws a point uniformly from the boundary of the second-order cone
/// `{x : 1'x >= sqrt(k-1) ||x||}` intersected with the unit sphere.
pub fn sample_cone_boundary<R: rand::Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    let kf = k as f64;
    // Gaussian direction with its mean removed is uniform on the sphere of 1-perp.
    let mut y: DVector<f64> = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
    let mean = y.mean();
    y.add_scalar_mut(-mean);
    let norm = y.norm();
    if norm > 0.0 {
        y /= norm * kf.sqrt();
    }
    let along = ((kf - 1.0) / kf).sqrt() / kf.sqrt();
    y.add_scalar(along)
}

/// Fraction of sampled boundary points of the second-order cone that lie in
/// `cone(Pi)` up to an NNLS residual of `tol`. Necessary, never sufficient.
pub fn mc_scattered_check(pi: &StochasticMatrix, num_samples: usize, seed: u64, tol: f64) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    let k = pi.rows();
    if k == 1 {
        return Ok(1.0);
    }
    let mut r = rng::stream(seed, "mc_scattered_check", k as u64);
    let a = pi.as_matrix();
    let hits = (0..num_samples)
        .filter(|_| {
            let x = sample_cone_boundary(k, &mut r);
            nnls(a, &x).1 <= tol
        })
        .count();
    Ok(hits as f64 / num_samples as f64)
}

pub fn diversity_report(p: &DMatrix<f64>, pi: &StochasticMatrix, k: usize, opts: &DiversityOptions) -> Result<DiversityReport> {
    if pi.rows() != k {
        return Err(Error::shape("policy rows", k, pi.rows()));
    }
    if p.ncols() != pi.cols() {
        return Err(Error::shape("demonstrator count", pi.cols(), p.ncols()));
    }
    let (rank_p, p_ok) = check_rank(p, k, opts.rank_tol)?;
    let (rank_pi, pi_ok) = check_rank(pi.as_matrix(), k, opts.rank_tol)?;
    let separable = check_separability(pi, opts.separability_tol);
    let mc_pass_rate = mc_scattered_check(pi, opts.num_samples, opts.seed, opts.cone_tol)?;
    let verdict = if !(p_ok && pi_ok) {
        Verdict::Violated
    } else if separable {
        Verdict::CertifiedSufficient
    } else if mc_pass_rate >= 1.0 {
        Verdict::Plausible
    } else {
        Verdict::Inconclusive
    };
    Ok(DiversityReport {
        rank_p,
        rank_pi,
        separable,
        mc_pass_rate,
        verdict,
        options: *opts,
    })
}
