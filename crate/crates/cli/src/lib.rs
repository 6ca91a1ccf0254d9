//! The `flightcast` command line: data generation, training, evaluation,
//! forecasting and model comparison.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use flightcast_core::models::ModelKind;
use flightcast_core::pipeline::SplitSpec;

use crate::commands::with_suffix;
use crate::config::RunConfig;

/// Exit status for usage, configuration and data errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for divergence and other numeric failures.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flightcast", version, about = "Multi-horizon departure demand forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config file (run config, or synthetic config for datagen).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Quarter-hour CSV input.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Model file to write (train) or read.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Primary output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model kind: lr, ar, seq2seq or seq2seq_attention.
    #[arg(long, global = true)]
    pub kind: Option<ModelKind>,
    /// Training seed, or the generator seed for datagen.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress timestamps in log output so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic quarter-hour dataset.
    Datagen {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model on the training range.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a model on the test range with rolling origins.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Forecast the slices after the end of the data.
    Forecast {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate evaluation reports against the lowest-mse one.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Evaluation report files, in table order.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Sort rows by mse, largest first.
        #[arg(long)]
        sort: bool,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Datagen { common }
            | Command::Train { common }
            | Command::Evaluate { common }
            | Command::Forecast { common }
            | Command::Compare { common, .. } => common,
        }
    }
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(k) = common.kind {
        cfg.kind = k;
    }
    if let Some(s) = common.seed {
        cfg.training.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or(fallback).cloned().with_context(|| format!("no {what} given (use --{what} or set it in the config)"))
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    match &cli.command {
        Command::Datagen { .. } => {
            let out = common.out.context("datagen needs --out")?;
            let n = commands::cmd_datagen(common.config.as_deref(), &out, common.seed)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Train { .. } => {
            let cfg = run_config(&common)?;
            let data = required(common.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
            let model = required(common.model.as_ref(), cfg.paths.model.as_ref(), "model")?;
            let loss = common.out.clone().or_else(|| cfg.paths.loss.clone());
            let trained = commands::cmd_train(&cfg, &data, &model, loss.as_deref())?;
            match trained.history.as_ref().and_then(|h| h.final_loss()) {
                Some(l) => println!(
                    "trained {} ({} epochs, final loss {l:.6}) → {}",
                    cfg.kind,
                    cfg.training.epochs,
                    model.display()
                ),
                None => println!("fitted {} → {}", cfg.kind, model.display()),
            }
        }
        Command::Evaluate { .. } => {
            let cfg = run_config(&common)?;
            let data = required(common.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
            let model = required(common.model.as_ref(), cfg.paths.model.as_ref(), "model")?;
            let report = required(common.out.as_ref(), cfg.paths.report.as_ref(), "out")?;
            let forecasts = cfg
                .paths
                .forecasts
                .clone()
                .filter(|_| common.out.is_none())
                .unwrap_or_else(|| with_suffix(&report, "forecasts.csv"));
            let split: SplitSpec = cfg.split;
            let r = commands::cmd_evaluate(&split, &model, &data, &report, &forecasts)?;
            println!(
                "{} {}: mse {:.4}  mae {:.4}  explained_variance {:.4}  ({} pairs)",
                r.data_label,
                r.model_label,
                r.metrics.quarter.mse,
                r.metrics.quarter.mae,
                r.metrics.quarter.explained_variance,
                r.metrics.quarter.n
            );
        }
        Command::Forecast { .. } => {
            let cfg = run_config(&common)?;
            let data = required(common.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
            let model = required(common.model.as_ref(), cfg.paths.model.as_ref(), "model")?;
            match &common.out {
                Some(path) => {
                    let mut f = std::io::BufWriter::new(
                        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
                    );
                    commands::cmd_forecast(&model, &data, &mut f)?;
                    f.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    commands::cmd_forecast(&model, &data, &mut stdout.lock())?;
                }
            }
        }
        Command::Compare { reports, sort, .. } => {
            let table = commands::cmd_compare(reports, *sort, common.out.as_deref())?;
            print!("{}", table.render());
        }
    }
    Ok(())
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flightcast_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            if matches!(e, E::Numeric(_) | E::Divergence { .. }) {
                return EXIT_NUMERIC;
            }
        }
    }
    EXIT_USAGE
}

/// Configures logging on stderr. Deterministic mode drops timestamps.
pub fn init_logging(deterministic: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if deterministic {
        b.format_timestamp(None);
    }
    let _ = b.try_init();
}
