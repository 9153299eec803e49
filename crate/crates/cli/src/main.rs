mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use rcast_core::{Error, ErrorKind};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "rcast", version, about = "Reservoir-ensemble forecasting of food-security indicators")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Long-format input CSV (overrides data.csv).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Feature metadata TOML (overrides data.metadata).
    #[arg(long, global = true)]
    metadata: Option<PathBuf>,
    /// Preprocessed frame written by `ingest` (overrides data.frame).
    #[arg(long, global = true)]
    frame: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Ensemble size.
    #[arg(long, global = true)]
    members: Option<usize>,
    /// Reservoir size.
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    first_cutoff: Option<NaiveDate>,
    #[arg(long, global = true)]
    splits: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read, resample, interpolate and smooth the input; write the frame.
    Ingest,
    /// Forecast from one cutoff with confidence bands.
    Forecast {
        /// Forecast origin; defaults to the day after the last observed target.
        #[arg(long)]
        cutoff: Option<NaiveDate>,
        /// Model family (overrides model.family).
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        no_bands: bool,
    },
    /// Evaluate the configured model on the split plan.
    Backtest {
        #[arg(long)]
        family: Option<String>,
    },
    /// Evaluate a configuration grid and select per split.
    Gridsearch {
        /// Comma-separated family names.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        /// Evaluate a seeded random subset of at most this many configurations.
        #[arg(long)]
        max_configs: Option<usize>,
    },
    /// Backtest the ensemble at several sizes.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Time one fit and forecast of each family's default model.
    Bench,
    /// Print the resolved configuration as TOML.
    Config,
}

fn resolve_config(g: &GlobalArgs, cmd: &Command) -> rcast_core::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &g.data {
        cfg.data.csv = Some(v.clone());
    }
    if let Some(v) = &g.metadata {
        cfg.data.metadata = Some(v.clone());
    }
    if let Some(v) = &g.frame {
        cfg.data.frame = Some(v.clone());
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = g.members {
        cfg.model.ensemble.n_members = v;
    }
    if let Some(v) = g.nodes {
        cfg.model.ensemble.member.n_nodes = v;
    }
    if let Some(v) = g.workers {
        cfg.workers = v;
    }
    if let Some(v) = &g.out {
        cfg.out = v.clone();
    }
    if let Some(v) = g.first_cutoff {
        cfg.splits.first_cutoff = Some(v);
    }
    if let Some(v) = g.splits {
        cfg.splits.n_splits = Some(v);
    }
    match cmd {
        Command::Forecast { cutoff, family, no_bands } => {
            if let Some(c) = cutoff {
                cfg.forecast.cutoff = Some(*c);
            }
            if let Some(f) = family {
                cfg.model.family = f.clone();
            }
            if *no_bands {
                cfg.forecast.bands = false;
            }
        }
        Command::Backtest { family: Some(f) } => cfg.model.family = f.clone(),
        Command::Gridsearch { families, max_configs } => {
            if let Some(f) = families {
                cfg.grid.families = f.clone();
            }
            if max_configs.is_some() {
                cfg.grid.max_configs = *max_configs;
            }
        }
        Command::Sweep { sizes: Some(s) } => cfg.sweep.sizes = s.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> rcast_core::Result<()> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Forecast { .. } => commands::forecast(&cfg),
        Command::Backtest { .. } => commands::backtest(&cfg),
        Command::Gridsearch { .. } => commands::gridsearch(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Bench => commands::bench(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn report_error(e: &Error) -> ExitCode {
    let kind = e.kind();
    let body = serde_json::json!({
        "error": format!("{kind:?}").to_lowercase(),
        "message": e.to_string(),
    });
    eprintln!("{body}");
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
