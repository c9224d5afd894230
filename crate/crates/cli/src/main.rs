use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use latentact_id::config::{parse_config, parse_table, resolve, validate_config, ScenarioConfig};
use latentact_id::report::write_artifacts;
use latentact_id::run_scenario;
use latentact_id::scenarios::ScenarioRegistry;

#[derive(Parser)]
#[command(name = "latentact-id", version, about = "Run latent action identification scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json, metrics.csv and (for fits) trace.csv.
    Run {
        #[arg(long)]
        scenario: Option<String>,
        /// TOML config; command-line flags override its seed and output directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; nothing is written when neither this nor the config sets one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List registered scenarios.
    ListScenarios,
}

fn build_config(
    registry: &ScenarioRegistry,
    scenario: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<ScenarioConfig> {
    let mut table = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?;
            parse_table(&text)?
        }
        None => {
            let Some(name) = &scenario else {
                bail!("pass --scenario or --config");
            };
            toml::Table::try_from(ScenarioConfig::minimal(name, 0))?
        }
    };
    if let Some(name) = scenario {
        let in_config = table.get("scenario").and_then(|v| v.as_str()).unwrap_or_default();
        if name != in_config {
            bail!("--scenario {name} conflicts with scenario '{in_config}' in the config");
        }
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).context("seed must fit in a signed 64-bit integer")?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    if let Some(dir) = out {
        table.insert("out".into(), toml::Value::String(dir.to_string_lossy().into_owned()));
    }
    Ok(resolve(table, registry)?)
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let registry = ScenarioRegistry::default();
    match cli.command {
        Command::ListScenarios => {
            for s in registry.iter() {
                println!("{:<22} {}", s.name(), s.summary());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = validate_config(&config, &registry)?;
            print!("{}", cfg.to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { scenario, config, seed, out } => {
            let cfg = build_config(&registry, scenario, config, seed, out)?;
            let (report, trace) = run_scenario(cfg, &registry)?;
            for c in &report.checks {
                println!(
                    "{} {}: {:.3e} ({:?} {:.3e})",
                    if c.pass { "ok  " } else { "FAIL" },
                    c.name,
                    c.value,
                    c.comparison,
                    c.threshold
                );
            }
            if let Some(dir) = &report.config.out {
                write_artifacts(&report, trace.as_ref(), dir)?;
                println!("wrote {}", dir.display());
            }
            println!(
                "{} seed {}: {} in {:.2}s",
                report.scenario,
                report.seed,
                if report.pass { "PASS" } else { "FAIL" },
                report.wall_clock_seconds
            );
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
