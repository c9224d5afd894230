//! Executable forms of the two determinant facts behind uniqueness of the
//! minimum-volume factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::permutations;
use crate::stochastic::{is_column_stochastic, StochasticMatrix, STOCHASTIC_TOL};

pub const DET_BOUND_SLACK: f64 = 1e-10;
pub const NEAR_UNIT_DET: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetBoundReport {
    /// `A Pi* >= 0` and `A' 1 = 1` both hold.
    pub feasible: bool,
    pub min_entry_of_product: f64,
    pub column_sum_deviation: f64,
    pub abs_det: f64,
    /// `|det A| <= 1 + 1e-10`; only meaningful when feasible.
    pub bound_holds: bool,
    /// Max-abs distance to the nearest permutation matrix, computed when
    /// `|det A| >= 1 - 1e-8`.
    pub distance_to_permutation: Option<f64>,
}

/// Checks a candidate change of basis `A` against a policy matrix `Pi*`.
///
/// An infeasible `A` is reported, not rejected.
pub fn check_det_bound(a: &DMatrix<f64>, pi_star: &StochasticMatrix) -> Result<DetBoundReport> {
    let k = pi_star.rows();
    if a.shape() != (k, k) {
        return Err(Error::shape("det-bound candidate", format!("{k}x{k}"), format!("{:?}", a.shape())));
    }
    let product = a * pi_star.as_matrix();
    let min_entry = product.min();
    let col_dev = a
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let feasible = min_entry >= -1e-12 && col_dev <= STOCHASTIC_TOL;
    let abs_det = a.determinant().abs();
    let distance_to_permutation = if abs_det >= 1.0 - NEAR_UNIT_DET {
        Some(distance_to_nearest_permutation(a)?)
    } else {
        None
    };
    Ok(DetBoundReport {
        feasible,
        min_entry_of_product: min_entry,
        column_sum_deviation: col_dev,
        abs_det,
        bound_holds: !feasible || abs_det <= 1.0 + DET_BOUND_SLACK,
        distance_to_permutation,
    })
}

pub fn distance_to_nearest_permutation(a: &DMatrix<f64>) -> Result<f64> {
    let k = a.nrows();
    let mut best = f64::INFINITY;
    for perm in permutations(k)? {
        let mut d = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if perm[i] == j { 1.0 } else { 0.0 };
                d = d.max((a[(i, j)] - target).abs());
            }
        }
        best = best.min(d);
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct ScalingCheck {
    pub all_stochastic: bool,
    /// Diagonal implied by `T' = T D`, read off from column sums.
    pub implied_scaling: DVector<f64>,
    pub max_deviation_from_identity: f64,
}

/// Forms `T' = T D` and `Pi' = D^-1 Pi` for a diagonal `D`.
pub fn rescale_pair(t: &DMatrix<f64>, pi: &DMatrix<f64>, d: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut tp = t.clone();
    let mut pip = pi.clone();
    for (a, &da) in d.iter().enumerate() {
        tp.column_mut(a).scale_mut(da);
        pip.row_mut(a).scale_mut(1.0 / da);
    }
    (tp, pip)
}

/// Given factor pairs related by a diagonal rescaling, recovers the scaling
/// and reports whether all four factors are column-stochastic. When they
/// are, the scaling is forced to the identity.
pub fn check_no_scaling(
    t: &DMatrix<f64>,
    t_prime: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    pi_prime: &DMatrix<f64>,
) -> ScalingCheck {
    let all_stochastic = [t, t_prime, pi, pi_prime]
        .iter()
        .all(|m| is_column_stochastic(m, STOCHASTIC_TOL));
    let implied = DVector::from_iterator(
        t.ncols(),
        t.column_iter()
            .zip(t_prime.column_iter())
            .map(|(c, cp)| cp.sum() / c.sum()),
    );
    let dev = implied.iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
    ScalingCheck {
        all_stochastic,
        implied_scaling: implied,
        max_deviation_from_identity: dev,
    }
}
