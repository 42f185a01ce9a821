//! Config-driven experiment runner: synthesis, feature caching, training, sweeps, k-fold and reports.

pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod kfold;
pub mod pool;
pub mod report;
pub mod run;
pub mod svg;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

/// Directory a command writes into: `<out_dir>/<name>`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(&cfg.name)
}

/// Writes the synthetic corpus as WAVs and a manifest; returns the directory.
pub fn cmd_synth(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = output_dir(cfg);
    let n = data::synth_to_dir(&cfg.dataset, &dir)?;
    eprintln!("wrote {n} clips to {}", dir.display());
    Ok(dir)
}

/// Caches the model's front-end features for the whole dataset.
pub fn cmd_extract(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let data = data::load(&cfg.dataset)?;
    let path = data::extract_to_dir(&data, cfg.model.front_end(), &output_dir(cfg))?;
    eprintln!("wrote {} feature maps to {}", data.waves.len(), path.display());
    Ok(path)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let data = data::load(&cfg.dataset)?;
    let dir = output_dir(cfg);
    let m = run::run_experiment(cfg, &data, &dir)?;
    if let Some(t) = &m.test {
        eprintln!("test accuracy {:.4}, macro F1 {:.4}", t.accuracy, t.macro_f1);
    }
    Ok(dir)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: usize) -> CliResult<PathBuf> {
    let data = data::load(&cfg.dataset)?;
    let dir = output_dir(cfg);
    let outcome = sweep::run_sweep(cfg, &data, &dir, jobs)?;
    eprintln!(
        "{} runs, {} failed, best {}",
        outcome.total,
        outcome.failed,
        outcome.best.as_deref().unwrap_or("none")
    );
    Ok(dir)
}

pub fn cmd_kfold(cfg: &ExperimentConfig, jobs: usize, resume: bool) -> CliResult<PathBuf> {
    let data = data::load(&cfg.dataset)?;
    let dir = output_dir(cfg);
    let (_, summary) = kfold::run_kfold_dir(cfg, &data, &dir, jobs, resume)?;
    eprintln!(
        "{}-fold accuracy mean {:.4} (best {:.4}, worst {:.4})",
        summary.k, summary.accuracy.mean, summary.accuracy.best, summary.accuracy.worst
    );
    Ok(dir)
}

pub fn cmd_report(target: &Path, out: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    report::report(target, out)
}
