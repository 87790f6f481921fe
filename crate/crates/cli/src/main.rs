//! `dsde`: batch runner for experiment configs.
//!
//! Exit status 0 when every requested audit passes, 1 when one fails (or
//! is inconclusive), 2 on usage or configuration errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn audit(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(e: std::io::Error, what: &str) -> Self {
        Self {
            code: 1,
            message: format!("{what}: {e}"),
        }
    }
}

impl From<dsde_core::Error> for Failure {
    fn from(e: dsde_core::Error) -> Self {
        use dsde_core::Error as E;
        let code = match e {
            E::UnknownFamily(_)
            | E::InvalidParameter { .. }
            | E::DimensionMismatch(_)
            | E::InvalidConfig(_)
            | E::SupportTouchesBoundary
            | E::TrivialWindow(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dsde", version, about = "Numerical laboratory for degenerate Itô SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sim.n_paths=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed (overrides `sim.master_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Hypothesis checks: factorization, ellipticity, growth, exponents.
    Check,
    /// Stationary density, drift split and their residuals.
    Density,
    /// Backward-Euler semigroup evolution and its audits.
    Semigroup,
    /// Euler–Maruyama ensemble with exit and occupation statistics.
    Simulate,
    /// Configured law diagnostics.
    Diagnose,
    /// Merge earlier JSON outputs of the output directory.
    Report,
}

fn run(cli: Cli) -> Result<bool, Failure> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::config(format!("worker pool: {e}")))?;
    }
    let workers = rayon::current_num_threads();
    if cli.command == Command::Report && cli.config.is_none() {
        let dir = cli
            .out
            .ok_or_else(|| Failure::config("report needs --config or --out"))?;
        return commands::report(&dir, workers);
    }
    let path = cli
        .config
        .ok_or_else(|| Failure::config("--config is required"))?;
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("sim.master_seed={s}"));
    }
    let mut cfg = config::ExperimentConfig::load(&path, &overrides)?;
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    let ctx = commands::Context::new(cfg, workers)?;
    match cli.command {
        Command::Check => commands::check(&ctx),
        Command::Density => commands::density(&ctx),
        Command::Semigroup => commands::semigroup(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
        Command::Report => commands::report(&ctx.cfg.output_dir, workers),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("dsde: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
