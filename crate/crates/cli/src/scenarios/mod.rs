//! Scenario registry. Each scenario fills its own defaults into a config and
//! turns a normalized config into an [`Outcome`].

mod alignment;
mod continuous;
mod counterexample;
mod diversity;
mod estimator;
mod finite;

use std::path::Path;

use latentact_core::env::{LatentEnv, PolicyFamily};
use latentact_core::linalg::tv_distance;
use latentact_core::nmf::best_permutation_error;
use nalgebra::DMatrix;

use crate::config::{EnvSpec, ScenarioConfig};
use crate::error::HarnessError;
use crate::report::Outcome;

pub trait Scenario: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    /// Fills every option the scenario reads and rejects options it ignores.
    /// Must be idempotent.
    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError>;
    /// Runs on a normalized config.
    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome>;
}

pub struct ScenarioRegistry {
    scenarios: Vec<Box<dyn Scenario>>,
}

impl ScenarioRegistry {
    pub fn empty() -> Self {
        Self { scenarios: Vec::new() }
    }

    pub fn register(&mut self, scenario: Box<dyn Scenario>) {
        self.scenarios.retain(|s| s.name() != scenario.name());
        self.scenarios.push(scenario);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.scenarios.iter().map(|s| s.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Scenario> {
        self.scenarios.iter().map(|s| s.as_ref())
    }

    pub fn get(&self, name: &str) -> Result<&dyn Scenario, HarnessError> {
        self.iter().find(|s| s.name() == name).ok_or_else(|| HarnessError::UnknownScenario {
            name: name.to_string(),
            registered: self.names().join(", "),
        })
    }
}

impl Default for ScenarioRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(counterexample::Counterexample));
        r.register(Box::new(finite::FiniteRecovery));
        r.register(Box::new(continuous::ContinuousRecovery));
        r.register(Box::new(alignment::GlobalAlignment));
        r.register(Box::new(estimator::EstimatorFit));
        r.register(Box::new(diversity::DiversityAudit));
        r
    }
}

/// Rejects option blocks a scenario does not read.
fn reject_blocks(cfg: &ScenarioConfig, unused: &[&str]) -> Result<(), HarnessError> {
    for &block in unused {
        let set = match block {
            "solver" => cfg.solver.is_some(),
            "diversity" => cfg.diversity.is_some(),
            "embedding" => cfg.embedding.is_some(),
            "align" => cfg.align.is_some(),
            "estimator" => cfg.estimator.is_some(),
            _ => false,
        };
        if set {
            return Err(HarnessError::invalid(block, format!("not used by scenario '{}'", cfg.scenario)));
        }
    }
    Ok(())
}

/// Defaults for a random finite environment, or a check that a loaded one
/// leaves the generator fields alone.
fn normalize_finite_env(env: &mut EnvSpec, scenario: &str, defaults: (usize, usize, usize, PolicyFamily)) -> Result<(), HarnessError> {
    if env.path.is_some() {
        return env.reject(scenario, &["num_states", "k", "m", "family"]);
    }
    let (n, k, m, family) = defaults;
    EnvSpec::fill(&mut env.num_states, n);
    EnvSpec::fill(&mut env.k, k);
    EnvSpec::fill(&mut env.m, m);
    env.family.get_or_insert(family);
    for (field, v) in [("num_states", env.num_states), ("k", env.k), ("m", env.m)] {
        if v == Some(0) {
            return Err(HarnessError::invalid(format!("env.{field}"), "must be at least 1"));
        }
    }
    if env.family == Some(PolicyFamily::Separable) && env.m < env.k {
        return Err(HarnessError::invalid("env.family", "separable policies need m >= k"));
    }
    Ok(())
}

fn finite_env(spec: &EnvSpec, seed: u64) -> anyhow::Result<LatentEnv> {
    if let Some(path) = &spec.path {
        return load_env(path);
    }
    let field = |v: Option<usize>, name: &str| v.ok_or_else(|| anyhow::anyhow!("env.{name} unset; normalize the config first"));
    Ok(LatentEnv::random_finite(
        field(spec.num_states, "num_states")?,
        field(spec.k, "k")?,
        field(spec.m, "m")?,
        spec.family.unwrap_or(PolicyFamily::Separable),
        seed,
    )?)
}

fn load_env(path: &Path) -> anyhow::Result<LatentEnv> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let env = LatentEnv::from_json(&text)?;
    if env.finite_size().is_none() {
        anyhow::bail!("{}: scenario needs a finite observation space", path.display());
    }
    Ok(env)
}

/// Largest total-variation errors of `T` and `Pi` columns under the best
/// action relabeling.
fn factor_tv(t: &DMatrix<f64>, t_ref: &DMatrix<f64>, pi: &DMatrix<f64>, pi_ref: &DMatrix<f64>) -> anyhow::Result<(f64, f64)> {
    let perm = best_permutation_error(t, t_ref, pi, pi_ref)?.perm;
    let col = |m: &DMatrix<f64>, j: usize| m.column(j).iter().copied().collect::<Vec<_>>();
    let t_err = perm
        .iter()
        .enumerate()
        .map(|(a, &b)| tv_distance(&col(t, a), &col(t_ref, b)))
        .fold(0.0, f64::max);
    let mut aligned = DMatrix::zeros(pi.nrows(), pi.ncols());
    for (a, &b) in perm.iter().enumerate() {
        aligned.set_row(b, &pi.row(a));
    }
    let pi_err = (0..pi.ncols())
        .map(|e| tv_distance(&col(&aligned, e), &col(pi_ref, e)))
        .fold(0.0, f64::max);
    Ok((t_err, pi_err))
}
