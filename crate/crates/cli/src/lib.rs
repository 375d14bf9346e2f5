//! Reproducible experiments over caching patterns: `enumerate`, `search`,
//! `run`, `bench` and `report`.
//!
//! Every command reads an [`ExperimentConfig`] (from `--config` or a built-in
//! `--preset`) and writes plain JSON/CSV artifacts into the output directory.
//! Artifacts hold no timestamps or timings, so reruns are byte-identical.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    bench, enumerate, report, run, search, BenchReport, BenchRow, EnumerationReport, RunReport,
    SearchReport,
};
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "procache", version, about = "Caching-pattern experiments on a small diffusion transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count (and optionally list) every pattern admitted by the constraints.
    Enumerate {
        #[command(flatten)]
        common: CommonArgs,
        /// Write every pattern to patterns.csv.
        #[arg(long)]
        list: bool,
        /// Tabulate how many patterns the sampler finds at 10^3..10^6 attempts.
        #[arg(long)]
        compare_sampler: bool,
    },
    /// Sample candidates and pick the one closest to full computation.
    Search {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Execute one pattern against the full-compute baseline.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Pattern file (JSON with steps, bits, meta).
        #[arg(long)]
        pattern: PathBuf,
        /// Replay caches only; no selective steps.
        #[arg(long)]
        no_selective: bool,
    },
    /// Compare baseline, uniform caching, the searched pattern and the
    /// searched pattern with selective steps.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Summarize the artifacts found in the output directory.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON, "schema": 1).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config: dit-xl2-like, pixart-like or golden.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sampler seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(CliError::config("pass --config <path> or --preset <name>")),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.search.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Config,
    Infeasible,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: msg.into(),
        }
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Infeasible,
            message: msg.into(),
        }
    }

    /// 0 success, 1 I/O, 2 configuration, 3 infeasible search, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Io => 1,
            ErrorKind::Config => 2,
            ErrorKind::Infeasible => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<procache::Error> for CliError {
    fn from(e: procache::Error) -> Self {
        use procache::Error as E;
        let kind = match e {
            E::NumericOverflow { .. } | E::UndefinedMetric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Config,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: e.to_string(),
        }
    }
}

/// Runs a parsed command line; output goes to `out` (stdout in the binary).
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Enumerate {
            common,
            list,
            compare_sampler,
        } => {
            let cfg = common.resolve()?;
            let r = enumerate(&cfg, *list, *compare_sampler)?;
            writeln!(out, "{}", r.render())?;
        }
        Command::Search { common } => {
            let r = search(&common.resolve()?)?;
            writeln!(out, "{}", r.render())?;
        }
        Command::Run {
            common,
            pattern,
            no_selective,
        } => {
            let r = run(&common.resolve()?, pattern, !no_selective)?;
            writeln!(out, "{}", r.render())?;
        }
        Command::Bench { common } => {
            let started = std::time::Instant::now();
            let r = bench(&common.resolve()?)?;
            writeln!(out, "{}", r.render())?;
            writeln!(out, "wall time {:.2}s (informational)", started.elapsed().as_secs_f64())?;
        }
        Command::Report { common } => {
            writeln!(out, "{}", report(&common.resolve()?)?)?;
        }
    }
    Ok(())
}
