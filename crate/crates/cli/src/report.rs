use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use latentact_core::estimator::FitReport;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Below,
    Above,
}

/// A recorded number against its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let pass = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::AtLeast => value >= threshold,
            Comparison::Below => value < threshold,
            Comparison::Above => value > threshold,
        };
        Self {
            name: name.to_string(),
            value,
            comparison,
            threshold,
            pass,
        }
    }

    /// A yes/no outcome recorded as 1 or 0 and required to be 1.
    pub fn flag(name: &str, holds: bool) -> Self {
        Self::new(name, if holds { 1.0 } else { 0.0 }, Comparison::AtLeast, 1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateResult {
    pub state: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl StateResult {
    pub fn new(state: usize) -> Self {
        Self {
            state,
            ..Self::default()
        }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn label(mut self, name: &str, value: impl ToString) -> Self {
        self.labels.insert(name.to_string(), value.to_string());
        self
    }
}

/// What a scenario hands back before timing and bookkeeping are added.
#[derive(Debug, Default)]
pub struct Outcome {
    pub per_state: Vec<StateResult>,
    pub metrics: BTreeMap<String, f64>,
    pub details: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub trace: Option<FitReport>,
}

impl Outcome {
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn detail(&mut self, name: &str, value: impl Serialize) {
        self.details.insert(name.to_string(), serde_json::to_value(value).expect("serializable detail"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub per_state: Vec<StateResult>,
    pub metrics: BTreeMap<String, f64>,
    pub details: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub wall_clock_seconds: f64,
}

impl ScenarioReport {
    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long-format CSV: one `state,metric,value` row per number; aggregate
    /// metrics use the state `all`.
    pub fn write_metrics_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["state", "metric", "value"])?;
        for s in &self.per_state {
            for (name, v) in &s.metrics {
                w.write_record([s.state.to_string(), name.clone(), v.to_string()])?;
            }
        }
        for (name, v) in &self.metrics {
            w.write_record(["all".to_string(), name.clone(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `report.json`, `metrics.csv` and, when present, `trace.csv`.
pub fn write_artifacts(report: &ScenarioReport, trace: Option<&FitReport>, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    report.write_metrics_csv(&dir.join("metrics.csv"))?;
    if let Some(t) = trace {
        let f = fs::File::create(dir.join("trace.csv"))?;
        t.write_csv(f)?;
    }
    Ok(())
}
