//! Config-driven scenario runner around `latentact-core`.

pub mod config;
pub mod error;
pub mod report;
pub mod scenarios;

use std::time::Instant;

use latentact_core::estimator::FitReport;

use config::{normalize, ScenarioConfig, SCHEMA_VERSION};
use report::ScenarioReport;
use scenarios::ScenarioRegistry;

/// Normalizes `cfg`, runs its scenario and assembles the report. A run
/// passes when it records at least one check and every check holds.
pub fn run_scenario(cfg: ScenarioConfig, registry: &ScenarioRegistry) -> anyhow::Result<(ScenarioReport, Option<FitReport>)> {
    let cfg = normalize(cfg, registry)?;
    let scenario = registry.get(&cfg.scenario)?;
    let start = Instant::now();
    let outcome = scenario.run(&cfg)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    let pass = !outcome.checks.is_empty() && outcome.checks.iter().all(|c| c.pass);
    let report = ScenarioReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        config: cfg,
        per_state: outcome.per_state,
        metrics: outcome.metrics,
        details: outcome.details,
        checks: outcome.checks,
        pass,
        wall_clock_seconds,
    };
    Ok((report, outcome.trace))
}
