use std::path::{Path, PathBuf};

use latentact_core::diversity::DiversityOptions;
use latentact_core::embedding::KernelSpec;
use latentact_core::env::PolicyFamily;
use latentact_core::estimator::HyperParams;
use latentact_core::nmf::SolverOptions;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::scenarios::ScenarioRegistry;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// One scenario run. Option blocks left out are filled with the scenario's
/// defaults by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<HyperParams>,
}

impl ScenarioConfig {
    pub fn minimal(scenario: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.to_string(),
            seed,
            out: None,
            env: EnvSpec::default(),
            solver: None,
            diversity: None,
            embedding: None,
            align: None,
            estimator: None,
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Environment generator settings, or `path` to a serialized environment.
/// Scenarios fill the fields they use and reject the ones they cannot honor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<PolicyFamily>,
    /// Transitions to sample; 0 means exact observables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    /// Labeled transitions drawn from the environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<usize>,
}

impl EnvSpec {
    pub fn fill(slot: &mut Option<usize>, value: usize) -> usize {
        *slot.get_or_insert(value)
    }

    /// Rejects fields a scenario does not read.
    pub fn reject(&self, scenario: &str, unused: &[&str]) -> Result<(), HarnessError> {
        for &field in unused {
            let set = match field {
                "path" => self.path.is_some(),
                "num_states" => self.num_states.is_some(),
                "k" => self.k.is_some(),
                "m" => self.m.is_some(),
                "family" => self.family.is_some(),
                "samples" => self.samples.is_some(),
                "dim" => self.dim.is_some(),
                "components" => self.components.is_some(),
                "anchors" => self.anchors.is_some(),
                _ => false,
            };
            if set {
                return Err(HarnessError::invalid(format!("env.{field}"), format!("not used by scenario '{scenario}'")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Path,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignOptions {
    pub graph: GraphKind,
    /// Neighbors per state for the `knn` graph.
    pub neighbors: usize,
    pub root: usize,
    /// Number of disconnected pieces the state graph is cut into.
    pub components: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            graph: GraphKind::Path,
            neighbors: 2,
            root: 0,
            components: 1,
        }
    }
}

/// Parses a config, rejecting unknown keys. Errors carry the line and field.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
}

/// Fills defaults through the scenario and checks every option block.
pub fn normalize(mut cfg: ScenarioConfig, registry: &ScenarioRegistry) -> Result<ScenarioConfig, HarnessError> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::invalid(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version),
        ));
    }
    let scenario = registry.get(&cfg.scenario)?;
    scenario.normalize(&mut cfg)?;
    if let Some(s) = &cfg.solver {
        s.validate().map_err(|e| HarnessError::invalid("solver", e.to_string()))?;
    }
    if let Some(h) = &cfg.estimator {
        h.validate().map_err(|e| HarnessError::invalid("estimator", e.to_string()))?;
    }
    if let Some(d) = &cfg.diversity {
        if d.num_samples == 0 || !(d.cone_tol > 0.0) || !(d.rank_tol > 0.0) {
            return Err(HarnessError::invalid("diversity", "num_samples and tolerances must be positive"));
        }
    }
    Ok(cfg)
}

/// Parses TOML without interpreting it, so callers can override keys first.
pub fn parse_table(text: &str) -> Result<toml::Table, HarnessError> {
    text.parse::<toml::Table>().map_err(|e| HarnessError::Parse(e.to_string()))
}

/// Typed config from a raw table. Option blocks given only in part are
/// completed from the scenario's defaults for the same `env`, not from the
/// block type's own defaults.
pub fn resolve(table: toml::Table, registry: &ScenarioRegistry) -> Result<ScenarioConfig, HarnessError> {
    let typed: ScenarioConfig = table.clone().try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    let mut base = ScenarioConfig::minimal(&typed.scenario, typed.seed);
    base.schema_version = typed.schema_version;
    base.env = typed.env.clone();
    let base = normalize(base, registry)?;
    let mut merged = toml::Table::try_from(&base).map_err(|e| HarnessError::Parse(e.to_string()))?;
    deep_merge(&mut merged, table);
    let cfg: ScenarioConfig = merged.try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    normalize(cfg, registry)
}

fn deep_merge(dst: &mut toml::Table, src: toml::Table) {
    for (key, value) in src {
        match (dst.get_mut(&key), value) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => deep_merge(d, s),
            (_, v) => {
                dst.insert(key, v);
            }
        }
    }
}

/// Reads, parses and resolves a config file.
pub fn validate_config(path: &Path, registry: &ScenarioRegistry) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)?;
    resolve(parse_table(&text)?, registry)
}
