use latentact_core::align::AnchorDataset;
use latentact_core::env::{sample_transitions, PolicyFamily, StartDistribution};
use latentact_core::estimator::{collapse_instance, evaluate, gradient_check, initial_model, policy_barrier_ablation, train, FitData, HyperParams};

use super::{finite_env, normalize_finite_env, reject_blocks, Scenario};
use crate::config::{EnvSpec, ScenarioConfig};
use crate::error::HarnessError;
use crate::report::{Check, Comparison, Outcome, StateResult};

const RECOVERY_TV: f64 = 0.1;
const GRADIENT_REL_ERROR: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

pub struct EstimatorFit;

impl Scenario for EstimatorFit {
    fn name(&self) -> &'static str {
        "estimator-fit"
    }

    fn summary(&self) -> &'static str {
        "penalized likelihood fit on sampled transitions, with a policy barrier ablation"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        reject_blocks(cfg, &["solver", "diversity", "embedding", "align"])?;
        cfg.env.reject(self.name(), &["dim", "components"])?;
        normalize_finite_env(&mut cfg.env, self.name(), (6, 3, 5, PolicyFamily::Separable))?;
        if EnvSpec::fill(&mut cfg.env.samples, 200_000) == 0 {
            return Err(HarnessError::invalid("env.samples", "the estimator needs sampled transitions"));
        }
        EnvSpec::fill(&mut cfg.env.anchors, 30);
        let hp = cfg.estimator.get_or_insert_with(|| HyperParams {
            lambda_vol: 1e-3,
            restarts: 24,
            seed: cfg.seed,
            ..HyperParams::default()
        });
        if hp.restarts == 0 {
            return Err(HarnessError::invalid("estimator.restarts", "must be at least 1"));
        }
        Ok(())
    }

    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let env = finite_env(&cfg.env, cfg.seed)?;
        let hp = cfg.estimator.clone().ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let samples = cfg.env.samples.ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        let n = env.finite_size().expect("finite environment");
        let batch = sample_transitions(&env, &StartDistribution::uniform(env.num_states(), env.m()), samples, cfg.seed)?;
        let data = FitData::finite(&batch, env.states(), env.m(), n)?;
        let anchors = AnchorDataset::sample_from_env(&env, cfg.env.anchors.unwrap_or(0), cfg.seed);

        let mut out = Outcome::default();
        let grad_err = gradient_check(&initial_model(&data, env.k(), &hp)?, &data, &anchors, &hp, FD_STEP)?;
        out.metric("gradient_rel_error", grad_err);
        out.checks.push(Check::new("gradient_rel_error", grad_err, Comparison::AtMost, GRADIENT_REL_ERROR));

        let fit = train(&data, &anchors, env.k(), &hp)?;
        let eval = evaluate(&fit.model, &env)?;
        for (s, sm) in eval.per_state.iter().enumerate() {
            out.per_state.push(
                StateResult::new(sm.state)
                    .metric("policy_tv", sm.policy_tv)
                    .metric("transition_error", sm.transition_error)
                    .metric("restart", fit.report.restart_per_state.get(s).copied().unwrap_or(0) as f64)
                    .label("perm", format!("{:?}", sm.perm)),
            );
        }
        let t = &fit.report.final_terms;
        out.metric("policy_tv_max", eval.policy_tv_max);
        out.metric("policy_tv_mean", eval.policy_tv_mean);
        out.metric("transition_error_max", eval.transition_error_max);
        out.metric("transition_error_mean", eval.transition_error_mean);
        out.metric("objective", t.total);
        out.metric("iterations", fit.report.iterations as f64);
        out.metric("grad_norm", fit.report.grad_norm);
        out.detail("stop", fit.report.stop);
        out.detail("final_terms", t);
        out.checks.push(Check::new("policy_tv_max", eval.policy_tv_max, Comparison::AtMost, RECOVERY_TV));
        out.checks.push(Check::new("transition_error_max", eval.transition_error_max, Comparison::AtMost, RECOVERY_TV));

        if hp.lambda_pol > 0.0 {
            let inst = collapse_instance(3, 4, 20_000, cfg.seed)?;
            let hp_ab = HyperParams {
                freeze_transitions: true,
                lambda_vol: 0.0,
                lambda_anchor: 0.0,
                ..hp.clone()
            };
            let ab = policy_barrier_ablation(&inst.init, &inst.data, &AnchorDataset::default(), &hp_ab)?;
            out.metric("ablation_logdet_without_barrier", ab.without_barrier.min_logdet);
            out.metric("ablation_logdet_with_barrier", ab.with_barrier.min_logdet);
            out.metric("ablation_r_pol_with_barrier", ab.with_barrier.r_pol);
            out.checks.push(Check::new(
                "ablation_logdet_gap",
                ab.with_barrier.min_logdet - ab.without_barrier.min_logdet,
                Comparison::Above,
                0.0,
            ));
            out.checks.push(Check::new("ablation_r_pol_with_barrier", ab.with_barrier.r_pol, Comparison::AtMost, 0.0));
            out.detail("ablation", &ab);
        }
        out.trace = Some(fit.report);
        Ok(out)
    }
}
