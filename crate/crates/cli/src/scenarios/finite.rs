use latentact_core::env::{estimate_conditionals, sample_transitions, PolicyFamily, StartDistribution};
use latentact_core::nmf::{best_permutation_error, minvol_factorize, SolverOptions};

use super::{factor_tv, finite_env, normalize_finite_env, reject_blocks, Scenario};
use crate::config::{EnvSpec, ScenarioConfig};
use crate::error::HarnessError;
use crate::report::{Check, Comparison, Outcome, StateResult};

/// Permutation error allowed on exact observables.
const EXACT_ERROR: f64 = 1e-5;
/// Column TV allowed on sampled data.
const SAMPLED_TV: f64 = 0.05;

pub struct FiniteRecovery;

impl Scenario for FiniteRecovery {
    fn name(&self) -> &'static str {
        "finite-recovery"
    }

    fn summary(&self) -> &'static str {
        "statewise min-volume factorization of a random finite environment"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        reject_blocks(cfg, &["diversity", "embedding", "align", "estimator"])?;
        cfg.env.reject(self.name(), &["dim", "components", "anchors"])?;
        normalize_finite_env(&mut cfg.env, self.name(), (6, 3, 5, PolicyFamily::Separable))?;
        let samples = EnvSpec::fill(&mut cfg.env.samples, 0);
        // sampled runs derive the solver per state from the observed counts
        if samples == 0 && cfg.solver.is_none() {
            if let Some(k) = cfg.env.k {
                cfg.solver = Some(SolverOptions {
                    seed: cfg.seed,
                    ..SolverOptions::exact(k)
                });
            }
        }
        if let (Some(s), Some(k)) = (&cfg.solver, cfg.env.k) {
            if s.k != k {
                return Err(HarnessError::invalid("solver.k", format!("must equal env.k = {k}, got {}", s.k)));
            }
        }
        Ok(())
    }

    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let env = finite_env(&cfg.env, cfg.seed)?;
        let samples = cfg.env.samples.unwrap_or(0);
        let mut out = Outcome::default();
        let mut worst = (0.0f64, 0.0f64);
        if samples == 0 {
            let opts = cfg.solver.clone().unwrap_or_else(|| SolverOptions {
                seed: cfg.seed,
                ..SolverOptions::exact(env.k())
            });
            let mut worst_residual = 0.0f64;
            for s in 0..env.num_states() {
                let res = minvol_factorize(&env.observable(s)?, &opts)?;
                let m = best_permutation_error(
                    res.transitions.as_matrix(),
                    env.transition_matrix(s)?.as_matrix(),
                    res.policies.as_matrix(),
                    env.policy(s).as_matrix(),
                )?;
                worst.0 = worst.0.max(m.error);
                worst_residual = worst_residual.max(res.residual);
                out.per_state.push(
                    StateResult::new(env.states()[s])
                        .metric("permutation_error", m.error)
                        .metric("residual", res.residual)
                        .metric("volume", res.objective)
                        .label("converged", res.converged),
                );
            }
            out.metric("permutation_error_max", worst.0);
            out.metric("residual_max", worst_residual);
            out.checks.push(Check::new("permutation_error_max", worst.0, Comparison::AtMost, EXACT_ERROR));
            out.checks.push(Check::new("residual_max", worst_residual, Comparison::AtMost, opts.feasibility_tol));
            out.detail("solver", &opts);
            return Ok(out);
        }

        let n = env.finite_size().expect("finite environment");
        let batch = sample_transitions(&env, &StartDistribution::uniform(env.num_states(), env.m()), samples, cfg.seed)?;
        let emp = estimate_conditionals(&batch, n, env.states(), env.m())?;
        let mut solvers = Vec::new();
        for s in 0..env.num_states() {
            let est = emp.estimate(s);
            let Some((p, cols)) = est.observed_matrix() else {
                anyhow::bail!("state {} was never visited; increase env.samples", env.states()[s]);
            };
            let opts = match &cfg.solver {
                Some(o) => o.clone(),
                None => SolverOptions {
                    seed: cfg.seed,
                    ..SolverOptions::sampled(env.k(), est.min_observed_count())
                },
            };
            let res = minvol_factorize(&p, &opts)?;
            let pi_ref = env.policy(s).as_matrix().select_columns(&cols);
            let (t_err, pi_err) = factor_tv(
                res.transitions.as_matrix(),
                env.transition_matrix(s)?.as_matrix(),
                res.policies.as_matrix(),
                &pi_ref,
            )?;
            worst = (worst.0.max(t_err), worst.1.max(pi_err));
            out.per_state.push(
                StateResult::new(env.states()[s])
                    .metric("transition_tv", t_err)
                    .metric("policy_tv", pi_err)
                    .metric("residual", res.residual)
                    .metric("observed_demonstrators", cols.len() as f64)
                    .metric("min_count", est.min_observed_count() as f64),
            );
            solvers.push(opts);
        }
        out.metric("transition_tv_max", worst.0);
        out.metric("policy_tv_max", worst.1);
        out.metric("samples", samples as f64);
        out.checks.push(Check::new("transition_tv_max", worst.0, Comparison::AtMost, SAMPLED_TV));
        out.checks.push(Check::new("policy_tv_max", worst.1, Comparison::AtMost, SAMPLED_TV));
        out.detail("solver_per_state", solvers);
        Ok(out)
    }
}
