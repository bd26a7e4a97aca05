//! `lnpde`: generate datasets, train, evaluate and run ablations.

mod commands;
mod config;
mod fsutil;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use latent_pde::data::Scale;

use config::{read_json, Overrides, Source};

#[derive(Parser)]
#[command(name = "lnpde", version, about = "Latent neural-ODE surrogates for time-dependent PDEs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/validation/test trajectory files.
    Gen {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes config.json, log.csv, best.ckpt and last.ckpt.
    Train {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
        /// Continue the run in --out from last.ckpt.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Delete an existing run directory first.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint at refined rollout steps.
    Eval {
        /// Run directory (uses best.ckpt and config.json).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON run configuration describing the data.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with train/val/test dataset files.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Step refinement factors, e.g. 1,5.
        #[arg(long, value_delimiter = ',')]
        dt_factors: Option<Vec<usize>>,
        /// Defaults to <run>/eval.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train and evaluate one model per value of an ablation axis.
    Ablate {
        /// rk-stage or l3.
        #[arg(long)]
        axis: Option<String>,
        /// Axis values; defaults to 1,2,3,4 for rk-stage and 0,1 for l3.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct DataFlags {
    /// JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// advection-fixed, advection-param, burgers-fixed, burgers-param,
    /// molenkamp or import.
    #[arg(long, value_parser = Source::parse)]
    preset: Option<Source>,
    /// desk or paper.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
    /// Seed for data generation, initialization and batching.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with train/val/test dataset files.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    strategy: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=4))]
    rk_stage: Option<u64>,
    /// Weight of the time-generalization term.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    model_seed: Option<u64>,
    /// Step refinement factors for evaluation, e.g. 1,5.
    #[arg(long, value_delimiter = ',')]
    dt_factors: Option<Vec<usize>>,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "desk" => Ok(Scale::Desk),
        "paper" => Ok(Scale::Paper),
        _ => Err(format!("unknown scale '{s}' (expected desk or paper)")),
    }
}

fn overrides(data: DataFlags, train: Option<TrainFlags>, out: PathBuf) -> Result<(Option<serde_json::Value>, Overrides)> {
    let file = data.config.as_deref().map(read_json).transpose()?;
    let mut o = Overrides {
        preset: data.preset,
        scale: data.scale,
        seed: data.seed,
        data_dir: data.data,
        out: Some(out),
        ..Default::default()
    };
    if let Some(t) = train {
        o.strategy = t.strategy;
        o.rk_stage = t.rk_stage.map(|q| q as usize);
        o.delta = t.delta;
        o.gamma0 = t.gamma0;
        o.lr = t.lr;
        o.batch_size = t.batch_size;
        o.epochs = t.epochs;
        o.patience = t.patience;
        o.latent_dim = t.latent_dim;
        o.model_seed = t.model_seed;
        o.dt_factors = t.dt_factors;
    }
    Ok((file, o))
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("LNPDE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("LNPDE_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.cmd {
        Command::Gen { data, out, force } => {
            let (file, o) = overrides(data, None, out)?;
            commands::gen(file, &o, force)
        }
        Command::Train {
            data,
            train,
            out,
            resume,
            force,
        } => {
            let (file, o) = overrides(data, Some(train), out)?;
            commands::train(file, &o, force, resume)
        }
        Command::Eval {
            run,
            checkpoint,
            config,
            data,
            split,
            dt_factors,
            out,
            force,
        } => {
            let file = config.as_deref().map(read_json).transpose()?;
            commands::eval(
                file,
                &commands::EvalArgs {
                    run,
                    checkpoint,
                    data_dir: data,
                    split,
                    dt_factors,
                    out,
                    force,
                },
            )
        }
        Command::Ablate {
            axis,
            values,
            data,
            train,
            out,
            force,
        } => {
            let (file, o) = overrides(data, Some(train), out)?;
            commands::ablate(file, &o, axis.as_deref(), values, force)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
