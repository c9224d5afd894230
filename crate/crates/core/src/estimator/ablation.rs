//! The policy-barrier ablation on an instance where the data cannot keep
//! demonstrators apart.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reg_pol, train_from, FitData, HyperParams, Model, PolicyParams, StopReason, TransitionParams};
use crate::align::AnchorDataset;
use crate::env::{sample_transitions, LatentEnv, ObservationSpace, StartDistribution, TransitionBlock};
use crate::error::Result;
use crate::linalg::logdet_spd;
use crate::rng;
use crate::stochastic::StochasticMatrix;

/// Three actions where actions 0 and 1 share one effect column, so the
/// likelihood only sees `pi_0 + pi_1` per demonstrator. `init` starts every
/// demonstrator on nearly the same policy, tilted slightly between actions 0
/// and 1, which the fit alone never corrects.
#[derive(Debug, Clone)]
pub struct CollapseInstance {
    pub env: LatentEnv,
    pub data: FitData,
    pub init: Model,
}

const INIT_TILT: f64 = 0.1;

pub fn collapse_instance(n: usize, m: usize, samples: usize, seed: u64) -> Result<CollapseInstance> {
    let k = 3;
    let mut transitions = Vec::with_capacity(n);
    let mut policies = Vec::with_capacity(n);
    let mut truth_t = Vec::with_capacity(n);
    for o in 0..n {
        let mut r = rng::stream(seed, "collapse-instance", o as u64);
        let pair = StochasticMatrix::random(n, 2, &mut r);
        let t = pair.select_columns(&[0, 0, 1]);
        let pi = DMatrix::from_fn(k, m, |a, e| {
            let bump = if a == e % k { 2.0 } else { 0.0 };
            bump + r.random_range(0.1..1.0)
        });
        truth_t.push(t.clone());
        transitions.push(TransitionBlock::Matrix(t));
        policies.push(StochasticMatrix::normalized(pi));
    }
    let env = LatentEnv::new(k, m, ObservationSpace::Finite { size: n }, (0..n).collect(), transitions, policies, None)?;
    let batch = sample_transitions(&env, &StartDistribution::uniform(n, m), samples, seed)?;
    let data = FitData::finite(&batch, env.states(), m, n)?;
    let shared = [0.4, 0.0, -0.3];
    let mut policy = PolicyParams::zeros(n, m, k);
    for s in 0..n {
        for e in 0..m {
            let i = policy.index(s, e, 0);
            policy.logits[i..i + k].copy_from_slice(&shared);
            policy.logits[i] += INIT_TILT * (e as f64 - (m as f64 - 1.0) / 2.0);
        }
    }
    let init = Model::new(policy, TransitionParams::tabular_from_matrices(&truth_t)?)?;
    Ok(CollapseInstance { env, data, init })
}

/// `log det(Pi Pi^T + eps I)` for every state.
pub fn policy_logdets(policy: &PolicyParams, eps: f64) -> Result<Vec<f64>> {
    (0..policy.num_states)
        .map(|s| {
            let pi = policy.matrix(s);
            logdet_spd(&(&pi * pi.transpose() + DMatrix::identity(policy.k, policy.k) * eps))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub lambda_pol: f64,
    /// Smallest per-state policy Gram log-det at the end of training.
    pub min_logdet: f64,
    /// Unweighted barrier value at the end of training.
    pub r_pol: f64,
    pub final_total: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAblation {
    pub tau: f64,
    pub without_barrier: AblationRun,
    pub with_barrier: AblationRun,
}

impl PolicyAblation {
    /// Dropping the barrier ends more collapsed, and the barrier is slack at
    /// the end of its own run.
    pub fn shows_collapse(&self) -> bool {
        self.without_barrier.min_logdet < self.with_barrier.min_logdet && self.with_barrier.r_pol == 0.0
    }
}

/// Trains from `init` twice, once with `lambda_pol = 0` and once with
/// `hp.lambda_pol`, everything else equal.
pub fn policy_barrier_ablation(init: &Model, data: &FitData, anchors: &AnchorDataset, hp: &HyperParams) -> Result<PolicyAblation> {
    let tau = hp.tau_for(init.k());
    let run = |lambda_pol: f64| -> Result<AblationRun> {
        let hp = HyperParams { lambda_pol, ..hp.clone() };
        let out = train_from(init.clone(), data, anchors, &hp)?;
        let min_logdet = policy_logdets(&out.model.policy, hp.eps)?.into_iter().fold(f64::INFINITY, f64::min);
        Ok(AblationRun {
            lambda_pol,
            min_logdet,
            r_pol: reg_pol(&out.model.policy, data, hp.eps, tau)?,
            final_total: out.report.final_terms.total,
            iterations: out.report.iterations,
            stop: out.report.stop,
        })
    };
    let (without, with) = std::thread::scope(|scope| {
        let without = scope.spawn(|| run(0.0));
        let with = run(hp.lambda_pol);
        (without.join().expect("ablation thread panicked"), with)
    });
    Ok(PolicyAblation {
        tau,
        without_barrier: without?,
        with_barrier: with?,
    })
}
