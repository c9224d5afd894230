//! Penalized maximum-likelihood estimation of policies and transitions.

mod ablation;
mod data;
mod evaluate;
mod objective;
mod params;
mod train;

pub use ablation::{collapse_instance, policy_barrier_ablation, policy_logdets, AblationRun, CollapseInstance, PolicyAblation};
pub use data::{FitData, Samples};
pub use evaluate::{evaluate, EvalMetrics, StateMetrics, TransitionMetric};
pub use objective::{anchor_loss, gradient_check, model_gram, nll_fit, objective, reg_pol, reg_vol, Terms, DENSITY_FLOOR};
pub use params::{softmax, Model, PolicyParams, TransitionParams};
pub use train::{initial_model, train, train_from, FitReport, StopReason, TraceRow, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search direction used by [`train`]. Both take monotone backtracking steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientDescent,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub fit_weight: f64,
    pub lambda_vol: f64,
    pub lambda_pol: f64,
    pub lambda_anchor: f64,
    pub eps: f64,
    /// Barrier threshold; `None` means `k log(1/k) - 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub step_size: f64,
    pub max_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init_scale: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Gaussian-kernel bandwidth for the gaussian head's Gram matrix. The
    /// tabular head always uses the delta kernel.
    pub gram_bandwidth: f64,
    pub freeze_transitions: bool,
    pub freeze_policy: bool,
    pub optimizer: Optimizer,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            fit_weight: 1.0,
            lambda_vol: 1e-2,
            lambda_pol: 1.0,
            lambda_anchor: 1e-3,
            eps: 1e-6,
            tau: None,
            step_size: 1.0,
            max_step: 1e4,
            backtrack: 0.5,
            armijo: 1e-4,
            max_iters: 5000,
            grad_tol: 1e-8,
            init_scale: 1.0,
            restarts: 1,
            seed: 0,
            gram_bandwidth: 1.0,
            freeze_transitions: false,
            freeze_policy: false,
            optimizer: Optimizer::Lbfgs,
        }
    }
}

impl HyperParams {
    pub fn default_tau(k: usize) -> f64 {
        let k = k as f64;
        k * (1.0 / k).ln() - 1.0
    }

    pub fn tau_for(&self, k: usize) -> f64 {
        self.tau.unwrap_or_else(|| Self::default_tau(k))
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("fit_weight", self.fit_weight),
            ("lambda_vol", self.lambda_vol),
            ("lambda_pol", self.lambda_pol),
            ("lambda_anchor", self.lambda_anchor),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        let positive = [
            ("eps", self.eps),
            ("step_size", self.step_size),
            ("max_step", self.max_step),
            ("gram_bandwidth", self.gram_bandwidth),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument("backtrack must lie in (0, 1)".into()));
        }
        if !(self.armijo >= 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidArgument("armijo must lie in [0, 1)".into()));
        }
        if self.tau.is_some_and(f64::is_nan) {
            return Err(Error::InvalidArgument("tau must not be NaN".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
