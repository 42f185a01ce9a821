//! A single training run and its directory.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use uavlab::models::Model;
use uavlab::peft::{inject, InjectionReport};
use uavlab::trainkit::{evaluate, prepare_sets, stratified_split, train, MetricsReport, Sample};

use crate::config::{ExperimentConfig, Stream};
use crate::data::Dataset;
use crate::error::CliResult;
use crate::io::{create_dir, write_json, write_text};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const INJECTION_FILE: &str = "injection.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SPLIT_FILE: &str = "split.json";

/// Final numbers of a run, written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Clean held-out test split.
    pub test: Option<MetricsReport>,
    /// Clean validation split, used to rank sweep runs.
    pub test_val: Option<MetricsReport>,
    pub best_epoch: usize,
    /// Best accuracy on the augmented train_val split that drove early stopping.
    pub best_val_accuracy: Option<f64>,
    pub epochs_run: usize,
    pub optimizer_steps: usize,
    pub train_samples: usize,
    pub wall_ms: u64,
}

impl RunMetrics {
    /// The report a sweep ranks by: test_val when present, else test.
    pub fn selection(&self) -> Option<&MetricsReport> {
        self.test_val.as_ref().or(self.test.as_ref())
    }
}

/// Builds the model and applies the adapter section, if any.
pub fn build_model(cfg: &ExperimentConfig, model_seed: u64) -> CliResult<(Model, Option<InjectionReport>)> {
    let mut model = Model::build(&cfg.model, model_seed)?;
    let report = match &cfg.adapter {
        Some(a) => Some(inject(&mut model, a, cfg.stream_seed(Stream::Adapter, 0))?),
        None => None,
    };
    Ok((model, report))
}

fn clean_metrics(model: &Model, set: &[Sample]) -> CliResult<Option<MetricsReport>> {
    if set.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(model, set)?))
}

/// Trains on one split of `data` and fills `dir` with the run's artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset, dir: &Path) -> CliResult<RunMetrics> {
    let started = Instant::now();
    create_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;

    let split = stratified_split(&data.labels(), &cfg.resolved_split())?;
    write_json(&dir.join(SPLIT_FILE), &split)?;
    let (model, report) = build_model(cfg, cfg.stream_seed(Stream::Model, 0))?;
    if let Some(r) = &report {
        write_json(&dir.join(INJECTION_FILE), r)?;
    }
    let sets = prepare_sets(
        &data.waves,
        &split,
        cfg.model.front_end(),
        cfg.augmentation.as_ref(),
        cfg.stream_seed(Stream::Augmentation, 0),
    )?;
    let val = (!sets.train_val.is_empty()).then_some(sets.train_val.as_slice());
    let outcome = train(model, &sets.train, val, &cfg.resolved_training())?;
    outcome.log.write(dir.join(RUNLOG_FILE))?;
    outcome.model.params().save(dir.join(WEIGHTS_FILE))?;

    let metrics = RunMetrics {
        test: clean_metrics(&outcome.model, &sets.test)?,
        test_val: clean_metrics(&outcome.model, &sets.test_val)?,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        epochs_run: outcome.log.epochs(),
        optimizer_steps: outcome.optimizer_steps,
        train_samples: sets.train.len(),
        wall_ms: started.elapsed().as_millis() as u64,
    };
    if let Some(m) = metrics.test.as_ref().or(metrics.test_val.as_ref()) {
        write_text(&dir.join(CONFUSION_FILE), &m.confusion_csv())?;
    }
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}
