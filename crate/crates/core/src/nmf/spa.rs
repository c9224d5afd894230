use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::stochastic::StochasticMatrix;

/// Successive projection: picks `k` columns of `p` by repeatedly taking the
/// column of largest residual norm and deflating along it.
///
/// Ties go to the lowest index. Fails with `RankDeficient` when the residual
/// collapses before `k` columns are found.
pub fn spa_init(p: &StochasticMatrix, k: usize) -> Result<Vec<usize>> {
    spa_columns(p.as_matrix(), k)
}

pub(crate) fn spa_columns(p: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    if k > p.ncols() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of columns ({})",
            p.ncols()
        )));
    }
    let mut r = p.clone();
    let initial = r.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = 1e-9 * initial.max(f64::MIN_POSITIVE);
    let mut picked = Vec::with_capacity(k);
    for step in 0..k {
        let (j, norm) = r
            .column_iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if norm <= floor {
            return Err(Error::RankDeficient {
                effective_rank: step,
                k,
            });
        }
        picked.push(j);
        let u = r.column(j) / norm;
        let proj = u.transpose() * &r;
        r -= &u * proj;
    }
    Ok(picked)
}

/// SPA under the inner product `<x, y> = x' K y`.
pub(crate) fn spa_columns_in_metric(p: &DMatrix<f64>, metric: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    let root = psd_sqrt(metric);
    spa_columns(&(root * p), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::mix_observable;
    use crate::rng;

    #[test]
    fn picks_unit_vectors_over_midpoint() {
        let p = StochasticMatrix::from_columns(
            3,
            &[vec![0.5, 0.5, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        )
        .unwrap();
        let mut idx = spa_init(&p, 2).unwrap();
        idx.sort();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn identity_block_columns_recover_transition_columns() {
        let mut r = rng::stream(3, "spa-test", 0);
        let t = StochasticMatrix::random(6, 3, &mut r);
        let extra = StochasticMatrix::random(3, 2, &mut r);
        let mut pi = DMatrix::zeros(3, 5);
        pi.view_mut((0, 0), (3, 3)).fill_with_identity();
        pi.view_mut((0, 3), (3, 2)).copy_from(extra.as_matrix());
        let pi = StochasticMatrix::new(pi).unwrap();
        let p = mix_observable(&t, &pi).unwrap();
        let idx = spa_init(&p, 3).unwrap();
        for &j in &idx {
            let col = p.column(j);
            let best = (0..3)
                .map(|a| (col.clone() - t.column(a)).amax())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-10, "column {j} is not a vertex ({best})");
        }
    }

    #[test]
    fn identical_columns_are_degenerate() {
        let p = StochasticMatrix::from_columns(2, &vec![vec![0.3, 0.7]; 3]).unwrap();
        assert!(matches!(
            spa_init(&p, 2),
            Err(Error::RankDeficient { effective_rank: 1, k: 2 })
        ));
        assert!(spa_init(&p, 4).is_err());
    }
}
