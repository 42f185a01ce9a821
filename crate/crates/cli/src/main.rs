use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uavlab_cli::{cmd_extract, cmd_kfold, cmd_report, cmd_sweep, cmd_synth, cmd_train, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "uavlab", version, about = "Acoustic UAV classification experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent runs for sweep and kfold.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Keep finished k-fold folds and run only the missing ones.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as WAV files plus a manifest.
    Synth,
    /// Cache front-end features for the dataset.
    Extract,
    /// Train and evaluate one configuration.
    Train,
    /// Run every configuration of the [sweep] table.
    Sweep,
    /// k-fold cross-validation.
    Kfold,
    /// Plots and tables for a run, sweep or k-fold directory, or a WAV file.
    Report { path: PathBuf },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml("schema_version = 1")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let jobs = cli.jobs.max(1);
    match &cli.command {
        Command::Report { path } => {
            for p in cmd_report(path, cli.out.as_deref())? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Synth => cmd_synth(&load_config(cli)?),
        Command::Extract => cmd_extract(&load_config(cli)?),
        Command::Train => cmd_train(&load_config(cli)?),
        Command::Sweep => cmd_sweep(&load_config(cli)?, jobs),
        Command::Kfold => cmd_kfold(&load_config(cli)?, jobs, cli.resume),
    }
    .map(|dir| println!("{}", dir.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
