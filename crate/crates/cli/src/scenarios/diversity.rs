use std::collections::BTreeMap;

use latentact_core::diversity::{diversity_report, DiversityOptions, Verdict};
use latentact_core::env::PolicyFamily;

use super::{finite_env, normalize_finite_env, reject_blocks, Scenario};
use crate::config::ScenarioConfig;
use crate::error::HarnessError;
use crate::report::{Check, Outcome, StateResult};

pub struct DiversityAudit;

impl Scenario for DiversityAudit {
    fn name(&self) -> &'static str {
        "diversity-audit"
    }

    fn summary(&self) -> &'static str {
        "rank, separability and scatter verdicts for each state's demonstrators"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        reject_blocks(cfg, &["solver", "embedding", "align", "estimator"])?;
        cfg.env.reject(self.name(), &["samples", "dim", "components", "anchors"])?;
        normalize_finite_env(&mut cfg.env, self.name(), (5, 3, 4, PolicyFamily::Random))?;
        cfg.diversity.get_or_insert_with(|| DiversityOptions {
            seed: cfg.seed,
            ..DiversityOptions::default()
        });
        Ok(())
    }

    fn run(&self, cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let env = finite_env(&cfg.env, cfg.seed)?;
        let opts = cfg.diversity.ok_or_else(|| anyhow::anyhow!("config is not normalized"))?;
        // verdicts the construction forces; a loaded environment only has the rank one
        let expected = |v: Verdict| -> bool {
            if env.m() < env.k() {
                return v == Verdict::Violated;
            }
            match (cfg.env.path.is_none(), cfg.env.family) {
                (true, Some(PolicyFamily::Separable)) => v == Verdict::CertifiedSufficient,
                (true, Some(PolicyFamily::Uniform)) => v != Verdict::CertifiedSufficient,
                _ => true,
            }
        };
        let mut out = Outcome::default();
        let mut tally: BTreeMap<String, usize> = BTreeMap::new();
        let mut consistent = true;
        for s in 0..env.num_states() {
            let p = env.observable(s)?;
            let rep = diversity_report(p.as_matrix(), env.policy(s), env.k(), &opts)?;
            consistent &= expected(rep.verdict);
            let verdict = serde_json::to_value(rep.verdict)?.as_str().unwrap_or_default().to_string();
            *tally.entry(verdict.clone()).or_default() += 1;
            out.per_state.push(
                StateResult::new(env.states()[s])
                    .metric("rank_p", rep.rank_p as f64)
                    .metric("rank_pi", rep.rank_pi as f64)
                    .metric("separable", rep.separable as u8 as f64)
                    .metric("mc_pass_rate", rep.mc_pass_rate)
                    .label("verdict", verdict),
            );
        }
        for (v, c) in &tally {
            out.metric(&format!("states_{}", v.replace('-', "_")), *c as f64);
        }
        out.detail("verdicts", &tally);
        out.detail("identifiable_by_construction", env.identifiable_by_construction());
        out.checks.push(Check::flag("verdicts_match_construction", consistent));
        Ok(out)
    }
}
