//! Command-line front end: batch experiments (`run`), the session server
//! (`serve`) and scenario checking (`validate`).

pub mod api;
pub mod config;
pub mod run;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use actowl_core::dialogue::LlmConfig;
use actowl_core::harness::EngineConfig;
use actowl_core::service::{DialogueFactory, SessionManager};
use actowl_core::Scenario;
use clap::{Parser, Subcommand};

use crate::config::{Backend, BackendArgs, EngineArgs, RunArgs};

#[derive(Debug, Parser)]
#[command(name = "actowl", version, about = "Learn who owns which object by asking as few questions as possible")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run experiments with scripted users and write metrics.
    Run(RunArgs),
    /// Serve interactive sessions over HTTP.
    Serve(ServeArgs),
    /// Check a scenario file and list every violation.
    Validate {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Additional scenario files to offer (repeatable); shipped ones are always available.
    #[arg(long = "scenario", value_name = "PATH")]
    pub scenarios: Vec<PathBuf>,
    /// Keep a replay log per session here and restore sessions on start.
    #[arg(long)]
    pub persist_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 2.
    Usage(String),
    /// Anything that failed while doing the work; exit status 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `args` and runs the chosen command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Serve(args) => cmd_serve(&args),
        Command::Validate { path } => cmd_validate(&path),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<ExitCode, CliError> {
    let config = args.effective().map_err(|e| CliError::Usage(format!("{e:#}")))?;
    let out = run::execute(&config)?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", run::summary(&config, &out.result));
    let _ = writeln!(stdout, "wrote {} and {}", out.metrics_path.display(), out.aggregate_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Exit status 0 iff the file parses and has no violations.
pub fn cmd_validate(path: &std::path::Path) -> Result<ExitCode, CliError> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    let report = validation_report(&src);
    let mut stdout = std::io::stdout().lock();
    if report.is_empty() {
        let _ = writeln!(stdout, "{}: valid", path.display());
        return Ok(ExitCode::SUCCESS);
    }
    let _ = writeln!(stdout, "{}: {} violation(s)", path.display(), report.len());
    for v in &report {
        let _ = writeln!(stdout, "  - {v}");
    }
    Ok(ExitCode::from(1))
}

/// Every problem with a scenario document, empty when it is valid.
pub fn validation_report(src: &str) -> Vec<String> {
    match serde_json::from_str::<Scenario>(src) {
        Ok(s) => s.violations(),
        Err(e) => vec![format!("not a scenario document: {e}")],
    }
}

/// Builds the session manager `serve` would run with.
pub fn build_manager(args: &ServeArgs) -> Result<SessionManager, CliError> {
    let mut engine = EngineConfig::default();
    args.engine.apply(&mut engine);
    engine.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut scenarios: BTreeMap<String, Scenario> = Scenario::builtin_names()
        .into_iter()
        .filter_map(|n| Scenario::builtin(n).map(|s| (n.to_string(), s)))
        .collect();
    for path in &args.scenarios {
        if !path.exists() {
            return Err(CliError::Usage(format!("scenario file not found: {}", path.display())));
        }
        let s = Scenario::load(path).map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
        scenarios.insert(s.name.clone(), s);
    }

    let mut backend = Backend::Mock;
    let mut llm = LlmConfig::default();
    let mut extra_shared = Vec::new();
    args.backend.apply(&mut backend, &mut llm, &mut extra_shared);
    if let Some(s) = scenarios.values().next() {
        run::build_dialogue(s, backend, &llm, &extra_shared)?;
    }
    let factory: DialogueFactory = Arc::new(move |s: &Scenario| {
        run::build_dialogue(s, backend, &llm, &extra_shared).expect("backend was checked at startup")
    });

    let mut manager = SessionManager::new(scenarios, factory, engine);
    if let Some(dir) = &args.persist_dir {
        manager = manager.with_persistence(dir);
    }
    Ok(manager)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<ExitCode, CliError> {
    let manager = build_manager(args)?;
    if args.persist_dir.is_some() {
        let n = manager.restore().map_err(|e| CliError::Runtime(anyhow::anyhow!("restoring sessions: {e}")))?;
        tracing::info!(sessions = n, "restored persisted sessions");
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address {}:{}: {e}", args.host, args.port)))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.into()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.into()))?;
        tracing::info!(%local, "serving");
        eprintln!("listening on http://{local}");
        axum::serve(listener, api::router(Arc::new(manager)))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.into()))?;
        tracing::info!("shut down");
        Ok(ExitCode::SUCCESS)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
