use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::permutations;

/// Best relabeling of recovered factors against a reference.
///
/// `perm[a]` is the reference label matched to recovered label `a`, i.e.
/// column `a` of `T` is compared with column `perm[a]` of `T_ref` and row `a`
/// of `Pi` with row `perm[a]` of `Pi_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationMatch {
    pub perm: Vec<usize>,
    pub error: f64,
}

/// Exhaustive search over `k!` relabelings minimizing the larger of the two
/// max-abs errors. First minimizer in lexicographic order wins.
pub fn best_permutation_error(
    t: &DMatrix<f64>,
    t_ref: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    pi_ref: &DMatrix<f64>,
) -> Result<PermutationMatch> {
    let k = t.ncols();
    if t.shape() != t_ref.shape() {
        return Err(Error::shape("transition factor", format!("{:?}", t_ref.shape()), format!("{:?}", t.shape())));
    }
    if pi.shape() != pi_ref.shape() || pi.nrows() != k {
        return Err(Error::shape("policy factor", format!("{:?}", pi_ref.shape()), format!("{:?}", pi.shape())));
    }
    let mut best = PermutationMatch {
        perm: (0..k).collect(),
        error: f64::INFINITY,
    };
    for perm in permutations(k)? {
        let mut err = 0.0f64;
        for (a, &b) in perm.iter().enumerate() {
            err = err.max((t.column(a) - t_ref.column(b)).amax());
            err = err.max((pi.row(a) - pi_ref.row(b)).amax());
            if err >= best.error {
                break;
            }
        }
        if err < best.error {
            best = PermutationMatch { perm, error: err };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stochastic::StochasticMatrix;
    use rand::Rng;

    fn planted(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut r = rng::stream(seed, "perm-test", 0);
        (
            StochasticMatrix::random(5, 3, &mut r).into_inner(),
            StochasticMatrix::random(3, 4, &mut r).into_inner(),
        )
    }

    #[test]
    fn swap_is_found_exactly() {
        let (t, pi) = planted(1);
        let swap = [1, 0, 2];
        let ts = t.select_columns(&swap);
        let pis = pi.select_rows(&swap);
        let m = best_permutation_error(&ts, &t, &pis, &pi).unwrap();
        assert_eq!(m.perm, vec![1, 0, 2]);
        assert_eq!(m.error, 0.0);
    }

    #[test]
    fn identical_inputs_give_identity() {
        let (t, pi) = planted(2);
        let m = best_permutation_error(&t, &t, &pi, &pi).unwrap();
        assert_eq!(m.perm, vec![0, 1, 2]);
        assert_eq!(m.error, 0.0);
    }

    #[test]
    fn perturbed_copy_stays_under_planted_permutation() {
        let (t, pi) = planted(3);
        let mut r = rng::stream(3, "perm-noise", 0);
        let plant = [2, 0, 1];
        let noisy = |m: DMatrix<f64>, r: &mut rng::StreamRng| m.map(|v| v + r.random_range(-1e-3..1e-3));
        let tn = noisy(t.select_columns(&plant), &mut r);
        let pin = noisy(pi.select_rows(&plant), &mut r);
        let m = best_permutation_error(&tn, &t, &pin, &pi).unwrap();
        assert_eq!(m.perm, plant.to_vec());
        assert!(m.error <= 2e-3);
    }

    #[test]
    fn rejects_large_k_and_bad_shapes() {
        let t = DMatrix::zeros(3, 10);
        let pi = DMatrix::zeros(10, 2);
        assert!(matches!(
            best_permutation_error(&t, &t, &pi, &pi),
            Err(Error::TooManyActions { .. })
        ));
        let (t, pi) = planted(4);
        assert!(best_permutation_error(&t, &t.columns(0, 2).into_owned(), &pi, &pi).is_err());
    }
}
