//! Errors of a fitted model against a known environment, up to relabeling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::params::{Model, TransitionParams};
use crate::env::{LatentEnv, TransitionBlock};
use crate::error::{Error, Result};
use crate::linalg::{permutations, tv_distance};
use crate::nmf::best_permutation_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMetric {
    /// Total variation between next-state distributions.
    Tv,
    /// Largest absolute difference in gaussian means and variances.
    ParamMaxAbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub state: usize,
    /// `perm[a]` is the true action matched to model action `a`.
    pub perm: Vec<usize>,
    pub policy_tv: f64,
    pub transition_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_state: Vec<StateMetrics>,
    pub policy_tv_max: f64,
    pub policy_tv_mean: f64,
    pub transition_error_max: f64,
    pub transition_error_mean: f64,
    pub transition_metric: TransitionMetric,
}

fn policy_tv(pi: &DMatrix<f64>, pi_ref: &DMatrix<f64>, perm: &[usize]) -> f64 {
    (0..pi.ncols())
        .map(|e| 0.5 * perm.iter().enumerate().map(|(a, &b)| (pi[(a, e)] - pi_ref[(b, e)]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Per state, the relabeling that best matches the truth (largest max-abs
/// error over both factors), then TV errors under that relabeling.
pub fn evaluate(model: &Model, env: &LatentEnv) -> Result<EvalMetrics> {
    let k = model.k();
    if env.k() != k || env.m() != model.policy.m || env.num_states() != model.policy.num_states {
        return Err(Error::shape(
            "model vs environment",
            format!("k={}, m={}, {} states", env.k(), env.m(), env.num_states()),
            format!("k={k}, m={}, {} states", model.policy.m, model.policy.num_states),
        ));
    }
    let mut per_state = Vec::with_capacity(env.num_states());
    let metric = if model.transitions.is_tabular() {
        TransitionMetric::Tv
    } else {
        TransitionMetric::ParamMaxAbs
    };
    for s in 0..env.num_states() {
        let pi = model.policy.matrix(s);
        let pi_ref = env.policy(s).as_matrix();
        let (perm, terr) = match (&model.transitions, env.transitions(s)) {
            (TransitionParams::Tabular { n, .. }, TransitionBlock::Matrix(t_ref)) => {
                if t_ref.rows() != *n {
                    return Err(Error::shape("next-state count", t_ref.rows(), n));
                }
                let t = model.transitions.matrix(s).expect("tabular");
                let perm = best_permutation_error(&t, t_ref.as_matrix(), &pi, pi_ref)?.perm;
                let terr = perm
                    .iter()
                    .enumerate()
                    .map(|(a, &b)| tv_distance(t.column(a).as_slice(), t_ref.as_matrix().column(b).as_slice()))
                    .fold(0.0, f64::max);
                (perm, terr)
            }
            (TransitionParams::Gaussian { log_sigma, .. }, TransitionBlock::Distributions(ds)) => {
                let var = (2.0 * log_sigma).exp();
                let truth: Vec<(&[f64], f64)> = ds
                    .iter()
                    .map(|d| d.as_gaussian().ok_or_else(|| Error::InvalidArgument("gaussian head needs gaussian truth".into())))
                    .collect::<Result<_>>()?;
                let terr_of = |perm: &[usize]| {
                    perm.iter()
                        .enumerate()
                        .map(|(a, &b)| {
                            let mu = model.transitions.mean(s, a).expect("gaussian");
                            let dm = mu.iter().zip(truth[b].0).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                            dm.max((var - truth[b].1).abs())
                        })
                        .fold(0.0, f64::max)
                };
                let perm = permutations(k)?
                    .into_iter()
                    .min_by(|p, q| {
                        let cost = |p: &[usize]| terr_of(p).max(policy_tv(&pi, pi_ref, p));
                        cost(p).total_cmp(&cost(q))
                    })
                    .expect("k >= 1");
                let terr = terr_of(&perm);
                (perm, terr)
            }
            _ => return Err(Error::InvalidArgument("model head does not match the environment".into())),
        };
        per_state.push(StateMetrics {
            state: env.states()[s],
            policy_tv: policy_tv(&pi, pi_ref, &perm),
            perm,
            transition_error: terr,
        });
    }
    let n = per_state.len() as f64;
    Ok(EvalMetrics {
        policy_tv_max: per_state.iter().map(|m| m.policy_tv).fold(0.0, f64::max),
        policy_tv_mean: per_state.iter().map(|m| m.policy_tv).sum::<f64>() / n,
        transition_error_max: per_state.iter().map(|m| m.transition_error).fold(0.0, f64::max),
        transition_error_mean: per_state.iter().map(|m| m.transition_error).sum::<f64>() / n,
        transition_metric: metric,
        per_state,
    })
}
