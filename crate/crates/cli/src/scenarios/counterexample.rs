use latentact_core::env::build_counterexample;

use super::{reject_blocks, Scenario};
use crate::config::ScenarioConfig;
use crate::error::HarnessError;
use crate::report::{Check, Comparison, Outcome};

pub struct Counterexample;

impl Scenario for Counterexample {
    fn name(&self) -> &'static str {
        "prop1-counterexample"
    }

    fn summary(&self) -> &'static str {
        "two exact factorizations of one observable that no relabeling reconciles"
    }

    fn normalize(&self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        cfg.env.reject(self.name(), &["path", "num_states", "k", "m", "family", "samples", "dim", "components", "anchors"])?;
        reject_blocks(cfg, &["solver", "diversity", "embedding", "align", "estimator"])
    }

    fn run(&self, _cfg: &ScenarioConfig) -> anyhow::Result<Outcome> {
        let c = build_counterexample();
        let (r1, r2) = c.residuals();
        let gap = c.permutation_gap();
        let mut out = Outcome::default();
        out.metric("residual_first", r1);
        out.metric("residual_second", r2);
        out.metric("permutation_gap", gap);
        out.detail("observable", c.observable.as_matrix().iter().copied().collect::<Vec<_>>());
        out.checks.push(Check::new("residual_first", r1, Comparison::AtMost, 1e-12));
        out.checks.push(Check::new("residual_second", r2, Comparison::AtMost, 1e-12));
        out.checks.push(Check::new("permutation_gap", gap, Comparison::AtLeast, 0.25));
        Ok(out)
    }
}
