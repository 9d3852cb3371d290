//! Command-line front end.
//!
//! Exit codes: 0 success, 2 data or configuration error, 3 solver failure,
//! 4 missing artifact (model or forecast file).

mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::ingest::IngestError;
use crate::pipeline::PipelineError;
use crate::quantreg::QuantRegError;
use crate::scoring::ScoringError;

pub use config::{ModelKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Ingest(#[from] IngestError),
    #[error("data: {0}")]
    Data(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Ingest(_) | Self::Data(_) | Self::Output(_) => 2,
            Self::Solver(_) => 3,
            Self::MissingArtifact(_) => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let solver = matches!(
            &e,
            PipelineError::QuantReg { source: QuantRegError::Model { .. }, .. }
                | PipelineError::QuantReg { source: QuantRegError::SolverDiverged { .. }, .. }
                | PipelineError::QuantReg { source: QuantRegError::RankDeficient, .. }
        );
        if solver {
            Self::Solver(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Pipeline(p) => p.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qrload", version, about = "Probabilistic hourly load forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and repair the data file; print a per-zone summary.
    Ingest(RunArgs),
    /// Fit one model file per zone.
    Fit(RunArgs),
    /// Write quantile forecasts for the configured window.
    Forecast(RunArgs),
    /// Score the forecast file against realized load and the benchmark.
    Evaluate(RunArgs),
    /// Fit, forecast and score the six competition tasks.
    Backtest(RunArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated zone list.
    #[arg(long)]
    pub zones: Option<String>,
    /// Worker threads (default: number of processors).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Emit quantiles without sorting crossed rows.
    #[arg(long)]
    pub no_rearrange: bool,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Input CSV (`timestamp,zone,load_mw,drybulb_f`).
    #[arg(long)]
    pub data: Option<String>,
    /// Last in-sample hour (`YYYY-MM-DD` or `YYYY-MM-DD 23:00`).
    #[arg(long)]
    pub last_in_sample: Option<String>,
    /// First forecast hour (a bare date means 00:00)
    #[arg(long)]
    pub forecast_start: Option<String>,
    /// Last forecast hour (a bare date means 23:00)
    #[arg(long)]
    pub forecast_end: Option<String>,
    /// `true` or `false`.
    #[arg(long)]
    pub rearrange: Option<String>,
    /// Clock-change rule of civil timestamps: `us` or `none`.
    #[arg(long)]
    pub dst: Option<String>,
    /// Train on all available days when fewer than the standard window exist.
    #[arg(long)]
    pub allow_short_history: Option<String>,
    /// `qr` or `benchmark`.
    #[arg(long)]
    pub model: Option<String>,
    /// Task label used in score reports.
    #[arg(long)]
    pub task: Option<String>,
}

impl RunArgs {
    /// Config file settings overridden by flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply(&config::parse_pairs(&text)?)?;
        }
        let mut flags = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                flags.insert(k.to_string(), v);
            }
        };
        put("zones", self.zones.clone());
        put("jobs", self.jobs.map(|j| j.to_string()));
        put("output", self.output.as_ref().map(|p| p.display().to_string()));
        put("data", self.data.clone());
        put("last_in_sample", self.last_in_sample.clone());
        put("forecast_start", self.forecast_start.clone());
        put("forecast_end", self.forecast_end.clone());
        put("rearrange", self.rearrange.clone());
        put("dst", self.dst.clone());
        put("allow_short_history", self.allow_short_history.clone());
        put("model", self.model.clone());
        put("task", self.task.clone());
        if self.no_rearrange {
            put("rearrange", Some("false".into()));
        }
        cfg.apply(&flags)?;
        Ok(cfg)
    }
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let (args, cmd): (&RunArgs, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Ingest(a) => (a, commands::ingest),
        Command::Fit(a) => (a, commands::fit),
        Command::Forecast(a) => (a, commands::forecast),
        Command::Evaluate(a) => (a, commands::evaluate),
        Command::Backtest(a) => (a, commands::backtest),
    };
    let cfg = args.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| cmd(&cfg))
}
