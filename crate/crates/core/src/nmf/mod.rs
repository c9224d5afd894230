//! Minimum-volume column-stochastic factorization `P = T Pi`.
//!
//! Among all exact factorizations with column-stochastic `T` (n x k) and
//! `Pi` (k x m), the solver looks for the one with least `det(T'T)`. The
//! scheme is SPA initialization followed by majorize-minimize steps on
//! `log det(T'T + eps I) + rho ||P - T Pi||_F^2` with a geometrically
//! growing penalty, exact simplex-constrained least squares for `Pi`, and
//! projected gradient steps for `T`.

mod lemmas;
mod permutation;
mod polish;
mod spa;

pub use lemmas::{
    check_det_bound, check_no_scaling, distance_to_nearest_permutation, rescale_pair,
    DetBoundReport, ScalingCheck, DET_BOUND_SLACK, NEAR_UNIT_DET,
};
pub use permutation::{best_permutation_error, PermutationMatch};
pub use polish::EXACT_RANK_TOL;
pub use spa::spa_init;
pub(crate) use spa::spa_columns_in_metric;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, project_columns_simplex, simplex_lsq, spd_inverse, sym_eigenvalues};
use crate::rng;
use crate::stochastic::StochasticMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub k: usize,
    pub restarts: usize,
    /// Iteration cap per penalty stage.
    pub max_iters: usize,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Regularizer inside the log determinant only.
    pub eps_det: f64,
    /// Stage stops once the max-abs change of `T` falls below this.
    pub projection_tol: f64,
    /// Residual bound for a restart to count as feasible.
    pub feasibility_tol: f64,
    /// Relative singular-value threshold for the effective rank of `P`.
    pub rank_tol: f64,
    /// Factorize at the effective rank instead of failing when it is below `k`.
    pub reduce_rank: bool,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            k: 3,
            restarts: 4,
            max_iters: 300,
            rho_init: 1e3,
            rho_growth: 10.0,
            rho_max: 1e13,
            eps_det: 1e-12,
            projection_tol: 1e-13,
            feasibility_tol: 1e-8,
            rank_tol: 1e-9,
            reduce_rank: false,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn exact(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    /// Options for empirical conditionals built from at least `min_count`
    /// samples per column: the feasibility tolerance becomes `3 / sqrt(min_count)`.
    pub fn sampled(k: usize, min_count: u64) -> Self {
        Self {
            k,
            feasibility_tol: 3.0 / (min_count.max(1) as f64).sqrt(),
            rank_tol: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.eps_det > 0.0) {
            return bad("eps_det must be positive");
        }
        if !(self.rho_init > 0.0) || !(self.rho_growth > 1.0) || self.rho_max < self.rho_init {
            return bad("penalty schedule needs rho_init > 0, rho_growth > 1, rho_max >= rho_init");
        }
        if !(self.feasibility_tol > 0.0) || !(self.rank_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorizationResult {
    pub transitions: StochasticMatrix,
    pub policies: StochasticMatrix,
    /// Unregularized volume `det(T' K T)` (`K = I` for finite spaces).
    pub objective: f64,
    /// `||P - T Pi||_F`.
    pub residual: f64,
    pub effective_rank: usize,
    pub rank_reduced: bool,
    pub restarts_used: usize,
    pub best_restart: usize,
    pub converged: bool,
}

/// `det(T'T)`, the squared volume spanned by the columns of `T`.
pub fn volume(t: &DMatrix<f64>) -> f64 {
    (t.transpose() * t).determinant().max(0.0)
}

pub(crate) fn metric_volume(t: &DMatrix<f64>, metric: Option<&DMatrix<f64>>) -> f64 {
    let g = match metric {
        Some(k) => t.transpose() * k * t,
        None => t.transpose() * t,
    };
    g.determinant().max(0.0)
}

pub fn minvol_factorize(p: &StochasticMatrix, opts: &SolverOptions) -> Result<FactorizationResult> {
    factorize_in_metric(p.as_matrix(), None, opts)
}

struct Candidate {
    t: DMatrix<f64>,
    pi: DMatrix<f64>,
    objective: f64,
    residual: f64,
    converged: bool,
}

/// Shared driver for the Euclidean and Gram-weighted problems. With
/// `metric = Some(K)` the volume is `det(T' K T)`; the fit term stays in
/// coordinates.
pub(crate) fn factorize_in_metric(
    p: &DMatrix<f64>,
    metric: Option<&DMatrix<f64>>,
    opts: &SolverOptions,
) -> Result<FactorizationResult> {
    opts.validate()?;
    if p.is_empty() {
        return Err(Error::Empty("observable matrix"));
    }
    if let Some(k) = metric {
        if k.shape() != (p.nrows(), p.nrows()) {
            return Err(Error::shape("metric", p.nrows(), format!("{:?}", k.shape())));
        }
    }
    let weighted = match metric {
        Some(k) => crate::linalg::psd_sqrt(k) * p,
        None => p.clone(),
    };
    let effective_rank = numerical_rank(&weighted, opts.rank_tol)?;
    let (target, k, reduced) = if effective_rank >= opts.k {
        (p.clone(), opts.k, false)
    } else if opts.reduce_rank {
        (project_to_rank(p, effective_rank), effective_rank, true)
    } else {
        return Err(Error::RankDeficient {
            effective_rank,
            k: opts.k,
        });
    };

    let mut best: Option<(usize, Candidate)> = None;
    let mut best_residual = f64::INFINITY;
    for restart in 0..opts.restarts {
        let t0 = initial_factor(&target, metric, k, restart, opts.seed)?;
        let mut cand = run_restart(&target, metric, t0, k, opts);
        if !reduced && cand.residual <= opts.feasibility_tol {
            refine(&target, metric, &mut cand, opts);
        }
        best_residual = best_residual.min(cand.residual);
        if cand.residual > opts.feasibility_tol {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => {
                cand.objective < b.objective
                    || (cand.objective == b.objective && cand.residual < b.residual)
            }
        };
        if better {
            best = Some((restart, cand));
        }
    }
    let (best_restart, c) = best.ok_or(Error::Infeasible {
        residual: best_residual,
        tolerance: opts.feasibility_tol,
    })?;
    // residual is measured against the caller's matrix, not the rank-reduced one
    let residual = (p - &c.t * &c.pi).norm();
    Ok(FactorizationResult {
        transitions: StochasticMatrix::normalized(c.t),
        policies: StochasticMatrix::normalized(c.pi),
        objective: c.objective,
        residual,
        effective_rank,
        rank_reduced: reduced,
        restarts_used: opts.restarts,
        best_restart,
        converged: c.converged,
    })
}

/// Orthogonal projection of the columns onto the top-`r` left singular
/// subspace, renormalized to the simplex.
fn project_to_rank(p: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    // singular values come sorted in nalgebra's SVD only after an explicit sort
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let ur = u.select_columns(&order[..r]);
    let proj = &ur * (ur.transpose() * p);
    StochasticMatrix::normalized(proj).into_inner()
}

fn initial_factor(
    p: &DMatrix<f64>,
    metric: Option<&DMatrix<f64>>,
    k: usize,
    restart: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let spa = match metric {
        Some(m) => spa_columns_in_metric(p, m, k),
        None => spa::spa_columns(p, k),
    };
    if restart == 0 {
        return Ok(p.select_columns(&spa?));
    }
    let mut r = rng::stream(seed, "minvol-restart", restart as u64);
    let cols: Vec<usize> = if p.ncols() >= k {
        sample(&mut r, p.ncols(), k).into_vec()
    } else {
        spa?
    };
    let noise = StochasticMatrix::random(p.nrows(), k, &mut r).into_inner();
    Ok(p.select_columns(&cols) * 0.7 + noise * 0.3)
}

/// Replaces a feasible candidate by its exact-data refinement when that keeps
/// feasibility and does not increase the volume.
fn refine(p: &DMatrix<f64>, metric: Option<&DMatrix<f64>>, cand: &mut Candidate, opts: &SolverOptions) {
    let Some(t) = polish::polish(p, &cand.t) else { return };
    let t = StochasticMatrix::normalized(t).into_inner();
    let pi = solve_policies(p, &t);
    let residual = (p - &t * &pi).norm();
    let objective = metric_volume(&t, metric);
    if residual <= opts.feasibility_tol && objective <= cand.objective {
        *cand = Candidate {
            t,
            pi,
            objective,
            residual,
            converged: true,
        };
    }
}

fn solve_policies(p: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    let mut pi = DMatrix::zeros(t.ncols(), p.ncols());
    for j in 0..p.ncols() {
        let col: DVector<f64> = p.column(j).into_owned();
        pi.set_column(j, &simplex_lsq(t, &col));
    }
    pi
}

fn run_restart(
    p: &DMatrix<f64>,
    metric: Option<&DMatrix<f64>>,
    mut t: DMatrix<f64>,
    k: usize,
    opts: &SolverOptions,
) -> Candidate {
    let eps = DMatrix::identity(k, k) * opts.eps_det;
    let metric_top = metric.map(|m| sym_eigenvalues(m).max()).unwrap_or(1.0);
    let mut pi = solve_policies(p, &t);
    let mut rho = opts.rho_init;
    let mut converged;
    loop {
        converged = false;
        for _ in 0..opts.max_iters {
            let gram = match metric {
                Some(m) => t.transpose() * m * &t,
                None => t.transpose() * &t,
            };
            let Ok(f_inv) = spd_inverse(&(gram + &eps)) else {
                break;
            };
            let pp = &pi * pi.transpose();
            let lip = 2.0 * (metric_top * sym_eigenvalues(&f_inv).max() + rho * sym_eigenvalues(&pp).max());
            let p_pi = p * pi.transpose();
            let prev = t.clone();
            for _ in 0..3 {
                let kt = match metric {
                    Some(m) => m * &t,
                    None => t.clone(),
                };
                let grad = (kt * &f_inv + (&t * &pp - &p_pi) * rho) * 2.0;
                t -= grad / lip;
                project_columns_simplex(&mut t);
            }
            pi = solve_policies(p, &t);
            if (&t - &prev).amax() < opts.projection_tol {
                converged = true;
                break;
            }
        }
        if rho >= opts.rho_max {
            break;
        }
        rho = (rho * opts.rho_growth).min(opts.rho_max);
    }
    let residual = (p - &t * &pi).norm();
    Candidate {
        objective: metric_volume(&t, metric),
        residual,
        converged: converged && residual <= opts.feasibility_tol,
        t,
        pi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_counterexample, mix_observable};
    use crate::rng;

    fn separable_instance(seed: u64) -> (StochasticMatrix, StochasticMatrix, StochasticMatrix) {
        let mut r = rng::stream(seed, "minvol-test", 0);
        let t = StochasticMatrix::random(6, 3, &mut r);
        let extra = StochasticMatrix::random(3, 2, &mut r);
        let mut pi = DMatrix::zeros(3, 5);
        pi.view_mut((0, 0), (3, 3)).fill_with_identity();
        pi.view_mut((0, 3), (3, 2)).copy_from(extra.as_matrix());
        let pi = StochasticMatrix::new(pi).unwrap();
        let p = mix_observable(&t, &pi).unwrap();
        (t, pi, p)
    }

    #[test]
    fn volume_examples() {
        assert_eq!(volume(&DMatrix::identity(2, 2)), 1.0);
        let dup = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(volume(&dup), 0.0);
        let t = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((volume(&t) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn recovers_separable_factorization() {
        let (t, pi, p) = separable_instance(11);
        let res = minvol_factorize(&p, &SolverOptions::exact(3)).unwrap();
        assert!(res.residual <= 1e-8);
        let m = best_permutation_error(
            res.transitions.as_matrix(),
            t.as_matrix(),
            res.policies.as_matrix(),
            pi.as_matrix(),
        )
        .unwrap();
        assert!(m.error <= 1e-6, "error {}", m.error);
    }

    #[test]
    fn single_action_returns_shared_column() {
        let col = vec![0.1, 0.2, 0.7];
        let p = StochasticMatrix::from_columns(3, &[col.clone(), col.clone(), col.clone()]).unwrap();
        let res = minvol_factorize(&p, &SolverOptions::exact(1)).unwrap();
        assert!((res.transitions.column(0) - DVector::from_vec(col)).amax() < 1e-10);
        assert!(res.policies.as_matrix().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn counterexample_is_rank_deficient() {
        let ce = build_counterexample();
        let err = minvol_factorize(&ce.observable, &SolverOptions::exact(2)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { effective_rank: 1, k: 2 }));
    }

    #[test]
    fn reduced_rank_mode_factorizes_distinct_effects() {
        // two of three latent actions share a transition, so rank(P) = 2
        let mut r = rng::stream(5, "reduce-test", 0);
        let base = StochasticMatrix::random(5, 2, &mut r).into_inner();
        let t = StochasticMatrix::new(base.select_columns(&[0, 1, 1])).unwrap();
        let pi = StochasticMatrix::from_columns(
            3,
            &[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.3, 0.3, 0.4],
            ],
        )
        .unwrap();
        let p = mix_observable(&t, &pi).unwrap();
        let opts = SolverOptions {
            reduce_rank: true,
            ..SolverOptions::exact(3)
        };
        let res = minvol_factorize(&p, &opts).unwrap();
        assert!(res.rank_reduced);
        assert_eq!(res.effective_rank, 2);
        assert_eq!(res.transitions.cols(), 2);
        assert!(res.residual <= 1e-8);
        let merged = StochasticMatrix::from_columns(
            2,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.3, 0.7]],
        )
        .unwrap();
        let m = best_permutation_error(
            res.transitions.as_matrix(),
            &base,
            res.policies.as_matrix(),
            merged.as_matrix(),
        )
        .unwrap();
        assert!(m.error <= 1e-6, "error {}", m.error);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let (_, _, p) = separable_instance(1);
        let opts = SolverOptions {
            eps_det: 0.0,
            ..SolverOptions::exact(3)
        };
        assert!(matches!(minvol_factorize(&p, &opts), Err(Error::InvalidArgument(_))));
        let opts = SolverOptions {
            restarts: 0,
            ..SolverOptions::exact(3)
        };
        assert!(minvol_factorize(&p, &opts).is_err());
    }
}
