//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest `k` for which exhaustive permutation search is allowed.
pub const MAX_PERMUTATION_K: usize = 9;

pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Empty("matrix"));
    }
    Ok(m.clone().svd(false, false).singular_values)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    let sv = singular_values(m)?;
    let top = sv.max();
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * top).count())
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `log det` of a symmetric positive definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &mut [f64]) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

pub fn project_columns_simplex(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        project_simplex(col.as_mut_slice());
    }
}

/// Non-negative least squares, Lawson–Hanson active set.
///
/// Returns the minimizer of `||A x - b||` over `x >= 0` and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let scale = a.amax().max(1.0) * (a.nrows().max(n) as f64);
    let tol = 10.0 * f64::EPSILON * scale;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let s = restricted_lstsq(a, b, &passive);
            let blocking: Vec<usize> = (0..n).filter(|&i| passive[i] && s[i] <= tol).collect();
            if blocking.is_empty() {
                x = s;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    let res = (a * &x - b).norm();
    (x, res)
}

fn restricted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = a.select_columns(&idx);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(idx.len()));
    let mut out = DVector::zeros(passive.len());
    for (p, &i) in idx.iter().enumerate() {
        out[i] = sol[p];
    }
    out
}

/// Least squares over the probability simplex: `min ||A x - b||` s.t. `x >= 0, 1'x = 1`.
///
/// Small problems enumerate supports and solve each equality-constrained
/// subproblem exactly; larger ones use a heavily weighted sum-to-one row in
/// NNLS followed by an exact solve on the detected support.
pub fn simplex_lsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.ncols();
    if k == 1 {
        return DVector::from_element(1, 1.0);
    }
    let mut x = if k <= 6 {
        simplex_lsq_enumerate(a, b)
    } else {
        simplex_lsq_weighted(a, b)
    };
    x.apply(|v| *v = v.max(0.0));
    let s = x.sum();
    if s > 0.0 {
        x /= s;
    } else {
        x.fill(1.0 / k as f64);
    }
    x
}

fn eq_constrained_lsq(a: &DMatrix<f64>, b: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let s = support.len();
    let sub = a.select_columns(support);
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    kkt.view_mut((0, 0), (s, s)).copy_from(&(sub.transpose() * &sub));
    for i in 0..s {
        kkt[(i, s)] = 1.0;
        kkt[(s, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs.rows_mut(0, s).copy_from(&(sub.transpose() * b));
    rhs[s] = 1.0;
    let sol = kkt
        .svd(true, true)
        .solve(&rhs, 1e-15)
        .unwrap_or_else(|_| DVector::from_element(s + 1, 1.0 / s as f64));
    sol.rows(0, s).into_owned()
}

pub(crate) fn simplex_lsq_enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1u32 << k) {
        let support: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let xs = eq_constrained_lsq(a, b, &support);
        if xs.iter().any(|&v| v < -1e-13) {
            continue;
        }
        let mut x = DVector::zeros(k);
        for (p, &i) in support.iter().enumerate() {
            x[i] = xs[p].max(0.0);
        }
        let obj = (a * &x - b).norm_squared();
        if best.as_ref().is_none_or(|(o, _)| obj < *o - 1e-300) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
        .unwrap_or_else(|| DVector::from_element(k, 1.0 / k as f64))
}

pub(crate) fn simplex_lsq_weighted(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (n, k) = a.shape();
    let w = 1e4 * a.amax().max(1.0);
    let mut aug = DMatrix::zeros(n + 1, k);
    aug.view_mut((0, 0), (n, k)).copy_from(a);
    aug.row_mut(n).fill(w);
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(b);
    rhs[n] = w;
    let (x0, _) = nnls(&aug, &rhs);
    let support: Vec<usize> = (0..k).filter(|&i| x0[i] > 0.0).collect();
    if support.is_empty() {
        return x0;
    }
    let xs = eq_constrained_lsq(a, b, &support);
    if xs.iter().all(|&v| v >= -1e-13) {
        let mut x = DVector::zeros(k);
        for (p, &i) in support.iter().enumerate() {
            x[i] = xs[p];
        }
        x
    } else {
        x0
    }
}

/// All permutations of `0..k` in lexicographic order, identity first.
pub fn permutations(k: usize) -> Result<Vec<Vec<usize>>> {
    if k > MAX_PERMUTATION_K {
        return Err(Error::TooManyActions {
            k,
            max: MAX_PERMUTATION_K,
        });
    }
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    Ok(out)
}

pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    inv
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Total-variation distance between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
