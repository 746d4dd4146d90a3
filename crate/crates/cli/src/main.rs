//! `aggronet`: synthesize data, train the hybrid classifier, evaluate,
//! predict and summarize runs.

mod commands;
mod config;
mod hash;

use std::path::PathBuf;
use std::process::ExitCode;

use aggronet::train::Partition;
use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Overrides, RunConfig};

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (dataset root for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root; replaces any `data` or `[synth]` in the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    base_lr: Option<f64>,
    /// Square input size in pixels.
    #[arg(long, global = true)]
    image_size: Option<usize>,
    #[arg(long, global = true)]
    dropout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic PPM dataset.
    Synth,
    /// Train and write checkpoint, history and run manifest.
    Train,
    /// Evaluate a checkpoint on one partition and write reports.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        partition: Partition,
    },
    /// Classify one image.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        image: PathBuf,
    },
    /// Summarize a training history and draw its curves.
    Report,
}

#[derive(Parser)]
#[command(name = "aggronet", version, about = "Hybrid VGG/Inception image classifier")]
struct Full {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn resolve(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        data: common.data.clone(),
        epochs: common.epochs,
        batch_size: common.batch_size,
        base_lr: common.base_lr,
        image_size: common.image_size,
        dropout: common.dropout,
    });
    Ok(cfg)
}

fn threads() -> Result<Option<usize>, ConfigError> {
    match std::env::var("AGGRONET_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError(format!(
                "AGGRONET_THREADS: `{v}` is not a positive integer"
            ))),
        },
    }
}

fn run(full: Full) -> Result<()> {
    let threads = threads()?;
    let cfg = resolve(&full.common)?;
    let checkpoint = |c: Option<PathBuf>| c.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_DIR));
    aggronet::par::with_threads(threads, || match full.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval {
            checkpoint: c,
            partition,
        } => commands::eval(&cfg, &checkpoint(c), partition),
        Command::Predict { checkpoint: c, image } => commands::predict(&checkpoint(c), &image),
        Command::Report => commands::report(&cfg.out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let full = Full::parse();
    match run(full) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
