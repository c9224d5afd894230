//! Tabular softmax policies and tabular or gaussian-head transition models.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::StochasticMatrix;

/// Numerically stable softmax into `out`.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Backpropagates `grad_p` (w.r.t. probabilities `p`) through a softmax.
pub(crate) fn softmax_backward(p: &[f64], grad_p: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    for ((o, &pi), &g) in out.iter_mut().zip(p).zip(grad_p) {
        *o += pi * (g - dot);
    }
}

/// Logits indexed `[state][demonstrator][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub num_states: usize,
    pub m: usize,
    pub k: usize,
    pub logits: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(num_states: usize, m: usize, k: usize) -> Self {
        Self {
            num_states,
            m,
            k,
            logits: vec![0.0; num_states * m * k],
        }
    }

    pub fn random<R: Rng + ?Sized>(num_states: usize, m: usize, k: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(num_states, m, k);
        for l in &mut p.logits {
            *l = rng.random_range(-scale..=scale);
        }
        p
    }

    /// Logits `log Pi` (floored) reproducing the given policy matrices.
    pub fn from_matrices(pis: &[StochasticMatrix]) -> Result<Self> {
        let (k, m) = pis.first().map(|p| (p.rows(), p.cols())).ok_or(Error::Empty("policy matrices"))?;
        let mut out = Self::zeros(pis.len(), m, k);
        for (s, pi) in pis.iter().enumerate() {
            if pi.rows() != k || pi.cols() != m {
                return Err(Error::shape("policy matrix", format!("{k}x{m}"), format!("{}x{}", pi.rows(), pi.cols())));
            }
            for e in 0..m {
                for a in 0..k {
                    let i = out.index(s, e, a);
                    out.logits[i] = pi.get(a, e).max(1e-300).ln();
                }
            }
        }
        Ok(out)
    }

    pub fn index(&self, s: usize, e: usize, a: usize) -> usize {
        (s * self.m + e) * self.k + a
    }

    pub fn probs(&self, s: usize, e: usize) -> Vec<f64> {
        let start = self.index(s, e, 0);
        let mut out = vec![0.0; self.k];
        softmax(&self.logits[start..start + self.k], &mut out);
        out
    }

    /// `Pi(s)` as a `k x m` column-stochastic matrix.
    pub fn matrix(&self, s: usize) -> DMatrix<f64> {
        let mut pi = DMatrix::zeros(self.k, self.m);
        for e in 0..self.m {
            pi.set_column(e, &nalgebra::DVector::from_vec(self.probs(s, e)));
        }
        pi
    }
}

/// Next-observation model `p(. | o, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionParams {
    /// Logits indexed `[state][action][next state]`.
    Tabular {
        num_states: usize,
        k: usize,
        n: usize,
        logits: Vec<f64>,
    },
    /// `N(mean[state][action], sigma^2 I)` with one shared `log sigma`.
    Gaussian {
        num_states: usize,
        k: usize,
        dim: usize,
        means: Vec<f64>,
        log_sigma: f64,
    },
}

impl TransitionParams {
    pub fn tabular_zeros(num_states: usize, k: usize, n: usize) -> Self {
        Self::Tabular {
            num_states,
            k,
            n,
            logits: vec![0.0; num_states * k * n],
        }
    }

    pub fn tabular_from_matrices(ts: &[StochasticMatrix]) -> Result<Self> {
        let (n, k) = ts.first().map(|t| (t.rows(), t.cols())).ok_or(Error::Empty("transition matrices"))?;
        let mut logits = vec![0.0; ts.len() * k * n];
        for (s, t) in ts.iter().enumerate() {
            if t.rows() != n || t.cols() != k {
                return Err(Error::shape("transition matrix", format!("{n}x{k}"), format!("{}x{}", t.rows(), t.cols())));
            }
            for a in 0..k {
                for o in 0..n {
                    logits[(s * k + a) * n + o] = t.get(o, a).max(1e-300).ln();
                }
            }
        }
        Ok(Self::Tabular {
            num_states: ts.len(),
            k,
            n,
            logits,
        })
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Tabular { k, .. } | Self::Gaussian { k, .. } => *k,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::Tabular { num_states, .. } | Self::Gaussian { num_states, .. } => *num_states,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, Self::Tabular { .. })
    }

    /// `T(s)` as an `n x k` column-stochastic matrix (tabular only).
    pub fn matrix(&self, s: usize) -> Option<DMatrix<f64>> {
        let Self::Tabular { k, n, logits, .. } = self else {
            return None;
        };
        let mut t = DMatrix::zeros(*n, *k);
        let mut col = vec![0.0; *n];
        for a in 0..*k {
            let start = (s * k + a) * n;
            softmax(&logits[start..start + n], &mut col);
            t.set_column(a, &nalgebra::DVector::from_column_slice(&col));
        }
        Some(t)
    }

    /// Mean of action `a` at state `s` (gaussian head only).
    pub fn mean(&self, s: usize, a: usize) -> Option<&[f64]> {
        let Self::Gaussian { k, dim, means, .. } = self else {
            return None;
        };
        let start = (s * k + a) * dim;
        Some(&means[start..start + dim])
    }

    pub(crate) fn len(&self) -> usize {
        match self {
            Self::Tabular { logits, .. } => logits.len(),
            Self::Gaussian { means, .. } => means.len() + 1,
        }
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        match self {
            Self::Tabular { logits, .. } => out.extend_from_slice(logits),
            Self::Gaussian { means, log_sigma, .. } => {
                out.extend_from_slice(means);
                out.push(*log_sigma);
            }
        }
    }

    pub(crate) fn read_flat(&mut self, x: &[f64]) {
        match self {
            Self::Tabular { logits, .. } => logits.copy_from_slice(x),
            Self::Gaussian { means, log_sigma, .. } => {
                let (mu, ls) = x.split_at(means.len());
                means.copy_from_slice(mu);
                *log_sigma = ls[0];
            }
        }
    }
}

/// Joint parameters `(theta, psi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub policy: PolicyParams,
    pub transitions: TransitionParams,
}

impl Model {
    pub fn new(policy: PolicyParams, transitions: TransitionParams) -> Result<Self> {
        if policy.num_states != transitions.num_states() || policy.k != transitions.k() {
            return Err(Error::shape(
                "model",
                format!("{} states, k={}", policy.num_states, policy.k),
                format!("{} states, k={}", transitions.num_states(), transitions.k()),
            ));
        }
        let bad = policy.logits.iter().any(|v| !v.is_finite())
            || match &transitions {
                TransitionParams::Tabular { logits, .. } => logits.iter().any(|v| !v.is_finite()),
                TransitionParams::Gaussian { means, log_sigma, .. } => means.iter().any(|v| !v.is_finite()) || !log_sigma.is_finite(),
            };
        if bad {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(Self { policy, transitions })
    }

    pub fn k(&self) -> usize {
        self.policy.k
    }

    pub fn num_policy_params(&self) -> usize {
        self.policy.logits.len()
    }

    /// Policy logits followed by transition parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.policy.logits.len() + self.transitions.len());
        x.extend_from_slice(&self.policy.logits);
        self.transitions.write_flat(&mut x);
        x
    }

    pub fn set_flat(&mut self, x: &[f64]) {
        let (p, t) = x.split_at(self.policy.logits.len());
        self.policy.logits.copy_from_slice(p);
        self.transitions.read_flat(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..10)) {
            let mut out = vec![0.0; v.len()];
            softmax(&v, &mut out);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn matrices_roundtrip_through_logits() {
        let mut r = rng::stream(1, "params-test", 0);
        let pis: Vec<_> = (0..3).map(|_| StochasticMatrix::random(3, 4, &mut r)).collect();
        let ts: Vec<_> = (0..3).map(|_| StochasticMatrix::random(5, 3, &mut r)).collect();
        let p = PolicyParams::from_matrices(&pis).unwrap();
        let t = TransitionParams::tabular_from_matrices(&ts).unwrap();
        for s in 0..3 {
            assert!((p.matrix(s) - pis[s].as_matrix()).amax() < 1e-12);
            assert!((t.matrix(s).unwrap() - ts[s].as_matrix()).amax() < 1e-12);
        }
        let mut model = Model::new(p, t).unwrap();
        let x = model.flat();
        let before = model.clone();
        model.set_flat(&x);
        assert_eq!(model, before);
    }
}
