//! The `run` command: batch experiments with scripted users.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use actowl_core::dialogue::{LlmConfig, TOKEN_ENV};
use actowl_core::harness::{write_metrics_csv, ExperimentResult};
use actowl_core::{run_experiment, Dialogue, LlmDialogue, Scenario};
use anyhow::Context;
use serde_json::json;

use crate::config::{Backend, RunConfig};
use crate::CliError;

/// Loads a scenario from a path, falling back to the shipped scenario of the
/// same name (`exp1` or `exp1.json`) when no such file exists.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path).map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())));
    }
    let bare = path.parent().is_none_or(|p| p.as_os_str().is_empty());
    if bare {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
        if let Some(s) = Scenario::builtin(stem) {
            return Ok(s);
        }
    }
    Err(CliError::Usage(format!("scenario file not found: {}", path.display())))
}

/// The dialogue backend a configuration asks for.
pub fn build_dialogue(scenario: &Scenario, backend: Backend, llm: &LlmConfig, extra_shared: &[String]) -> Result<Arc<dyn Dialogue>, CliError> {
    match backend {
        Backend::Mock => Ok(Arc::new(scenario.mock_dialogue(extra_shared))),
        Backend::Llm => {
            if std::env::var(TOKEN_ENV).map_or(true, |t| t.is_empty()) {
                return Err(CliError::Usage(format!("--backend llm needs the {TOKEN_ENV} environment variable")));
            }
            Ok(Arc::new(LlmDialogue::from_env(llm.clone())))
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub config_path: PathBuf,
    pub result: ExperimentResult,
}

/// Runs every strategy for the configured trials and writes
/// `metrics.csv`, `aggregate.json` and `effective_config.json`.
pub fn execute(config: &RunConfig) -> Result<RunOutput, CliError> {
    config.validate().map_err(CliError::Usage)?;
    let scenario = resolve_scenario(config.scenario.as_deref().unwrap_or_default())?;
    let dialogue = build_dialogue(&scenario, config.backend, &config.llm, &config.mock_extra_shared)?;

    let run = || run_experiment(&scenario, &config.strategies, config.trials, config.seed, &config.engine, dialogue.as_ref());
    let result = match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(run),
        None => run(),
    }
    .with_context(|| format!("experiment on scenario `{}` failed", scenario.name))?;

    std::fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let metrics_path = config.out_dir.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    write_metrics_csv(result.records(), std::io::BufWriter::new(file)).context("writing metrics")?;

    let failures: serde_json::Map<String, serde_json::Value> = config
        .strategies
        .iter()
        .map(|m| {
            let n: usize = result.outcomes.iter().filter(|o| o.method == *m).map(|o| o.failures.len()).sum();
            (m.name().to_string(), json!(n))
        })
        .collect();
    let aggregate = json!({
        "scenario": scenario.name,
        "config": config,
        "strategies": result.aggregate,
        "interpretation_failures": failures,
    });
    let aggregate_path = config.out_dir.join("aggregate.json");
    write_json(&aggregate_path, &aggregate)?;
    let config_path = config.out_dir.join("effective_config.json");
    write_json(&config_path, &serde_json::to_value(config).context("serializing config")?)?;

    Ok(RunOutput {
        metrics_path,
        aggregate_path,
        config_path,
        result,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).context("serializing")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Final-step mean ARI per strategy, one line each.
pub fn summary(config: &RunConfig, result: &ExperimentResult) -> String {
    let mut out = String::new();
    for m in &config.strategies {
        if let Some(last) = result.rows(*m).last() {
            out.push_str(&format!(
                "{:<9} step {:>3}  ARI {:.3} ± {:.3}\n",
                m.name(),
                last.step,
                last.mean_ari,
                last.std_ari
            ));
        }
    }
    out
}
