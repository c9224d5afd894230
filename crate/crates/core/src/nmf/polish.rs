//! Exact-data refinement of a penalty solution.
//!
//! When `P` has exact rank `k`, write `P = U Q` with `U` an orthonormal basis
//! of its column space and `T = U W^-1`. Then `Pi = W Q`, column sums of `T`
//! become the linear constraint `1' W = 1' U`, and the volume is
//! `det(U' K U) / det(W)^2`. Minimizing volume is maximizing `log |det W|`
//! over the polytope `W Q >= 0`, which is concave, so a log-barrier Newton
//! method reaches the optimum from any strictly feasible start.

use nalgebra::{DMatrix, DVector};

use crate::linalg::sym_eigenvalues;

/// Largest `||P - U U' P||_F` for which `P` counts as exactly rank `k`.
pub const EXACT_RANK_TOL: f64 = 1e-10;
/// Entries of the refined `T` below this are treated as a violated bound.
const NEGATIVE_T_TOL: f64 = 1e-9;
const INTERIOR_SHIFT: f64 = 1e-3;
const MU_START: f64 = 1e-4;
const MU_END: f64 = 1e-17;
const NEWTON_ITERS: usize = 60;

/// Top-`k` left singular basis of `p` when `p` is numerically rank `k`.
fn exact_basis(p: &DMatrix<f64>, k: usize) -> Option<DMatrix<f64>> {
    let svd = p.clone().svd(true, false);
    let u = svd.u?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < k {
        return None;
    }
    let uk = u.select_columns(&order[..k]);
    let rest = p - &uk * (uk.transpose() * p);
    (rest.norm() <= EXACT_RANK_TOL).then_some(uk)
}

/// `-log |det W| - mu * sum log (W Q)`, or `None` outside the domain.
fn barrier(w: &DMatrix<f64>, q: &DMatrix<f64>, mu: f64) -> Option<f64> {
    let r = w * q;
    if r.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let det = w.determinant();
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(-det.abs().ln() - mu * r.iter().map(|v| v.ln()).sum::<f64>())
}

/// One barrier stage: equality-constrained Newton on `vec(W)` (row-major).
fn newton_stage(w: &mut DMatrix<f64>, q: &DMatrix<f64>, mu: f64) -> Option<()> {
    let k = w.nrows();
    let nv = k * k;
    for _ in 0..NEWTON_ITERS {
        let winv = w.clone().try_inverse()?;
        let r = &*w * q;
        let inv_r = r.map(|v| 1.0 / v);
        let inv_r2 = r.map(|v| 1.0 / (v * v));
        // gradient: -W^-T - mu (1/R) Q'
        let g_mat = -winv.transpose() - (&inv_r * q.transpose()) * mu;
        let mut kkt = DMatrix::zeros(nv + k, nv + k);
        let mut rhs = DVector::zeros(nv + k);
        for a in 0..k {
            for b in 0..k {
                let i = a * k + b;
                rhs[i] = -g_mat[(a, b)];
                for c in 0..k {
                    for d in 0..k {
                        kkt[(i, c * k + d)] = winv[(b, c)] * winv[(d, a)];
                    }
                }
                for d in 0..k {
                    let h: f64 = (0..q.ncols()).map(|j| q[(b, j)] * q[(d, j)] * inv_r2[(a, j)]).sum();
                    kkt[(i, a * k + d)] += mu * h;
                }
                // column-sum constraint: sum over rows a of W[a, b]
                kkt[(i, nv + b)] = 1.0;
                kkt[(nv + b, i)] = 1.0;
            }
        }
        let sol = kkt.lu().solve(&rhs)?;
        let step = DMatrix::from_row_slice(k, k, &sol.as_slice()[..nv]);
        // directional derivative along the step; its magnitude is the Newton decrement
        let slope: f64 = -(0..nv).map(|i| rhs[i] * sol[i]).sum::<f64>();
        if slope.abs() < 1e-22 {
            return Some(());
        }
        let f0 = barrier(w, q, mu)?;
        let mut t = 1.0;
        loop {
            let cand = &*w + &step * t;
            if let Some(f) = barrier(&cand, q, mu) {
                if f <= f0 + 0.25 * t * slope {
                    *w = cand;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Some(());
            }
        }
    }
    Some(())
}

/// Refines `t` so that `t pi = p` is kept and `det(T' K T)` is minimized.
/// Returns `None` when `p` is not exactly rank `k`, the start cannot be made
/// strictly feasible, or the optimum leaves the nonnegative orthant.
pub(crate) fn polish(p: &DMatrix<f64>, t: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = t.ncols();
    let u = exact_basis(p, k)?;
    let q = u.transpose() * p;
    let c = u.row_sum();
    let w0 = (u.transpose() * t).try_inverse()?;
    let v = DMatrix::from_fn(k, k, |_, j| c[j] / k as f64);
    let mut w = w0 * (1.0 - INTERIOR_SHIFT) + v * INTERIOR_SHIFT;
    let drift = &c - w.row_sum();
    for mut row in w.row_iter_mut() {
        row += &drift / k as f64;
    }
    barrier(&w, &q, MU_START)?;
    let mut mu = MU_START;
    while mu >= MU_END {
        newton_stage(&mut w, &q, mu)?;
        mu *= 0.1;
    }
    let refined = &u * w.try_inverse()?;
    if refined.min() < -NEGATIVE_T_TOL || sym_eigenvalues(&(refined.transpose() * &refined)).min() <= 0.0 {
        return None;
    }
    Some(refined)
}
