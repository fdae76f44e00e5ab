use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use massl_cli::config::{parse_config, parse_config_str, RunConfig};
use massl_cli::experiment::{self, ExperimentError};

/// Semi-supervised segmentation experiments on synthetic data.
#[derive(Parser)]
#[command(name = "massl", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train the configured strategy on the configured fold.
    Train,
    /// Test Dice of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Linear probe of encoder features.
    Probe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Significance table from a sweep table.
    Compare {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Every strategy on every fold.
    Sweep,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match path {
        Some(p) => parse_config(p)?,
        None => parse_config_str("")?,
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = load(cli.config.as_ref())?;
    match &cli.command {
        Command::Synth => experiment::synth(&cfg).map(drop),
        Command::Train => experiment::train(&cfg).map(drop),
        Command::Eval { checkpoint } => experiment::eval(&cfg, checkpoint.as_deref()).map(drop),
        Command::Probe { checkpoint } => experiment::probe(&cfg, checkpoint.as_deref()).map(drop),
        Command::Compare { input } => experiment::compare(&cfg, input.as_deref()).map(drop),
        Command::Sweep => experiment::sweep(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
