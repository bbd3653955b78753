//! Run configuration: a JSON file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use actowl_core::dialogue::LlmConfig;
use actowl_core::harness::{Ablation, EngineConfig, IgModeName};
use actowl_core::Method;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Mock,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario file, or the name of a shipped scenario.
    pub scenario: Option<String>,
    pub strategies: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub engine: EngineConfig,
    pub backend: Backend,
    pub llm: LlmConfig,
    /// Classes the mock classifier reports as shared regardless of its table.
    pub mock_extra_shared: Vec<String>,
    pub out_dir: PathBuf,
    /// Worker threads for trials; all cores when absent.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            strategies: vec![Method::IgMax],
            trials: 20,
            seed: 0,
            engine: EngineConfig::default(),
            backend: Backend::Mock,
            llm: LlmConfig::default(),
            mock_extra_shared: Vec::new(),
            out_dir: PathBuf::from("results"),
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&src).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scenario.is_none() {
            return Err("no scenario given (use --scenario or the config file's `scenario`)".into());
        }
        if self.strategies.is_empty() {
            return Err("at least one strategy is required".into());
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return Err("jobs must be at least 1".into());
        }
        self.engine.validate().map_err(|e| e.to_string())
    }
}

/// A comma-separated strategy list as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyList(pub Vec<Method>);

fn parse_strategies(s: &str) -> Result<StrategyList, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse::<Method>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(StrategyList)
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: actowl_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IgModeArg {
    Sampled,
    Exact,
}

impl From<IgModeArg> for IgModeName {
    fn from(m: IgModeArg) -> Self {
        match m {
            IgModeArg::Sampled => IgModeName::Sampled,
            IgModeArg::Exact => IgModeName::Exact,
        }
    }
}

/// Engine flags shared by `run` and `serve`.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// Particles per filter.
    #[arg(long)]
    pub particles: Option<usize>,
    /// Pseudo-answers per particle for sampled IG.
    #[arg(long)]
    pub pseudo_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub ig_mode: Option<IgModeArg>,
    /// none, color-only, position-only or attribute-only.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
}

impl EngineArgs {
    pub fn apply(&self, engine: &mut EngineConfig) {
        if let Some(p) = self.particles {
            engine.particles = p;
        }
        if let Some(j) = self.pseudo_samples {
            engine.pseudo_samples = j;
        }
        if let Some(m) = self.ig_mode {
            engine.ig_mode = m.into();
        }
        if let Some(a) = self.ablation {
            engine.ablation = a;
        }
    }
}

/// Dialogue backend flags shared by `run` and `serve`.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Chat-completion endpoint URL for the llm backend.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Extra classes the mock classifier treats as shared (repeatable).
    #[arg(long = "mock-extra-shared", value_name = "CLASS")]
    pub mock_extra_shared: Vec<String>,
}

impl BackendArgs {
    pub fn apply(&self, backend: &mut Backend, llm: &mut LlmConfig, extra_shared: &mut Vec<String>) {
        if let Some(b) = self.backend {
            *backend = b;
        }
        if let Some(e) = &self.llm_endpoint {
            llm.endpoint = e.clone();
        }
        if let Some(m) = &self.llm_model {
            llm.model = m.clone();
        }
        if !self.mock_extra_shared.is_empty() {
            *extra_shared = self.mock_extra_shared.clone();
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Scenario file or shipped scenario name (exp1, exp2, exp3).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated strategies: ig-max, ig-min, random, no-llm, llm-only.
    #[arg(long, value_parser = parse_strategies)]
    pub strategy: Option<StrategyList>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving metrics.csv and aggregate.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for trials.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl RunArgs {
    /// The configuration file (or defaults) with every given flag applied.
    pub fn effective(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scenario {
            c.scenario = Some(s.clone());
        }
        if let Some(s) = &self.strategy {
            c.strategies = s.0.clone();
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        self.engine.apply(&mut c.engine);
        self.backend.apply(&mut c.backend, &mut c.llm, &mut c.mock_extra_shared);
        if let Some(o) = &self.out_dir {
            c.out_dir = o.clone();
        }
        if let Some(j) = self.jobs {
            c.jobs = Some(j);
        }
        Ok(c)
    }
}
