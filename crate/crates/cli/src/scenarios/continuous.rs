use latentact_core::embedding::{continuous_minvol_factorize, Embedder, KernelRegistry, KernelSpec};
use latentact_core::env::LatentEnv;
use latentact_core::nmf::{best_permutation_error, SolverOptions};

use super::{reject_blocks, Scenario};
use crate::config::{EnvSpec, ScenarioConfig};
use crate::error::HarnessError;
use crate::report::{Check, Comparison, Outcome, StateResult};

const COORDINATE_ERROR: f64 = 1e-4;

pub struct ContinuousRecovery;

impl Scenario for ContinuousRecovery {
    fn name(&self) -> &'static str {
        "continuous-recovery"
    }

    fn summary(&self) -> &'static str {
        "kernel-embedded factorization over a gaussian dictionary"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        reject_blocks(cfg, &["diversity", "align", "estimator"])?;
        let env = &mut cfg.env;
        env.reject(self.name(), &["path", "family", "samples", "anchors"])?;
        EnvSpec::fill(&mut env.num_states, 3);
        let dim = EnvSpec::fill(&mut env.dim, 2);
        EnvSpec::fill(&mut env.components, 8);
        let k = EnvSpec::fill(&mut env.k, 3);
        let m = EnvSpec::fill(&mut env.m, 5);
        if m < k {
            return Err(HarnessError::invalid("env.m", "dictionary environments use separable policies, so m >= k"));
        }
        if env.components < env.k {
            return Err(HarnessError::invalid("env.components", "need at least k dictionary components"));
        }
        let spec = cfg.embedding.get_or_insert_with(|| KernelSpec::gaussian(Some(1.0), dim));
        let registry = KernelRegistry::default();
        if !registry.names().contains(&spec.kind.as_str()) {
            return Err(HarnessError::invalid(
                "embedding.kind",
                format!("unknown kernel '{}'; registered: {}", spec.kind, registry.names().join(", ")),
            ));
        }
        if spec.kind == "gaussian" && spec.dim != Some(dim) {
            return Err(HarnessError::invalid("embedding.dim", format!("must equal env.dim = {dim}")));
        }
        let solver = cfg.solver.get_or_insert_with(|| SolverOptions {
            seed: cfg.seed,
            ..SolverOptions::exact(k)
        });
        if solver.k != k {
            return Err(HarnessError::invalid("solver.k", format!("must equal env.k = {k}, got {}", solver.k)));
        }
        Ok(())
    }

    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let e = &cfg.env;
        let need = |v: Option<usize>| v.ok_or_else(|| anyhow::anyhow!("config is not normalized"));
        let env = LatentEnv::gaussian_dictionary(need(e.num_states)?, need(e.dim)?, need(e.components)?, need(e.k)?, need(e.m)?, cfg.seed)?;
        let spec = cfg.embedding.as_ref().ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let kernel = KernelRegistry::default().build(spec, None)?;
        let embedder = Embedder::with_dictionary(kernel, env.dictionary().expect("dictionary environment").to_vec())?;
        let opts = cfg.solver.clone().ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let mut out = Outcome::default();
        let mut worst = 0.0f64;
        for s in 0..env.num_states() {
            let res = continuous_minvol_factorize(&embedder, &env.dictionary_observables(s)?, &opts)?;
            let m = best_permutation_error(
                res.coordinates.as_matrix(),
                env.dictionary_coordinates(s)?.as_matrix(),
                res.policies.as_matrix(),
                env.policy(s).as_matrix(),
            )?;
            worst = worst.max(m.error);
            out.per_state.push(StateResult::new(env.states()[s]).metric("coordinate_error", m.error));
        }
        out.metric("coordinate_error_max", worst);
        out.checks.push(Check::new("coordinate_error_max", worst, Comparison::AtMost, COORDINATE_ERROR));
        Ok(out)
    }
}
