//! k-fold campaigns with per-fold directories and resume.

use std::path::Path;

use uavlab::dsp::derive_seed;
use uavlab::models::Model;
use uavlab::peft::inject;
use uavlab::trainkit::{featurize, make_folds, run_fold, summarize, FoldPlan, FoldResult, KfoldSummary};

use crate::config::{ExperimentConfig, Stream};
use crate::data::Dataset;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, csv_string, read_json, write_json, write_text};
use crate::pool::run_bounded;
use crate::run::{CONFIG_FILE, RUNLOG_FILE};

pub const FOLDS_FILE: &str = "folds.json";
pub const RESULT_FILE: &str = "result.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn fold_dir(dir: &Path, fold: usize) -> std::path::PathBuf {
    dir.join(format!("fold-{fold}"))
}

/// Per-fold rows followed by the seven summary rows.
pub fn aggregate_csv(results: &[FoldResult], summary: &KfoldSummary) -> CliResult<String> {
    let header = ["fold", "accuracy", "f1", "time_ms"].map(String::from);
    let mut rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.fold.to_string(),
                r.metrics.accuracy.to_string(),
                r.metrics.macro_f1.to_string(),
                r.time_ms.to_string(),
            ]
        })
        .collect();
    for (name, value) in summary.rows() {
        let column = if name.ends_with("accuracy") {
            1
        } else if name.ends_with("f1") {
            2
        } else {
            3
        };
        let mut row = vec![name.to_string(), String::new(), String::new(), String::new()];
        row[column] = value.to_string();
        rows.push(row);
    }
    csv_string(&header, &rows)
}

/// Runs every fold not already on disk (with `resume`) and writes the aggregate.
pub fn run_kfold_dir(
    cfg: &ExperimentConfig,
    data: &Dataset,
    dir: &Path,
    jobs: usize,
    resume: bool,
) -> CliResult<(Vec<FoldResult>, KfoldSummary)> {
    create_dir(dir)?;
    let plan = make_folds(&data.labels(), cfg.kfold.k, cfg.stream_seed(Stream::Split, cfg.split.seed))?;
    let plan_path = dir.join(FOLDS_FILE);
    if resume && plan_path.exists() {
        let previous: FoldPlan = read_json(&plan_path)?;
        if previous != plan {
            return Err(CliError::Runtime(format!(
                "{}: existing fold assignment differs from this config; rerun without --resume",
                dir.display()
            )));
        }
    }
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    write_json(&plan_path, &plan)?;

    let todo: Vec<usize> = (0..plan.k)
        .filter(|&i| !(resume && fold_dir(dir, i).join(RESULT_FILE).exists()))
        .collect();
    if !todo.is_empty() {
        let front_end = cfg.model.front_end();
        let clean = featurize(&data.waves, front_end)?;
        let train_cfg = cfg.resolved_training();
        let model_seed = cfg.stream_seed(Stream::Model, 0);
        let factory = |fold: usize| -> uavlab::Result<Model> {
            let mut m = Model::build(&cfg.model, derive_seed(model_seed, fold as u64))?;
            if let Some(a) = &cfg.adapter {
                inject(&mut m, a, cfg.stream_seed(Stream::Adapter, fold as u64))?;
            }
            Ok(m)
        };
        let outcomes = run_bounded(todo.len(), jobs, |j| -> CliResult<()> {
            let i = todo[j];
            let (result, outcome) = run_fold(&factory, &data.waves, &clean, &plan, i, &train_cfg)?;
            let fd = fold_dir(dir, i);
            create_dir(&fd)?;
            outcome.log.write(fd.join(RUNLOG_FILE))?;
            write_json(&fd.join(RESULT_FILE), &result)?;
            eprintln!("fold {i}: accuracy {:.4} ({} ms)", result.metrics.accuracy, result.time_ms);
            Ok(())
        });
        outcomes.into_iter().collect::<CliResult<Vec<()>>>()?;
    }

    let results = (0..plan.k)
        .map(|i| read_json::<FoldResult>(&fold_dir(dir, i).join(RESULT_FILE)))
        .collect::<CliResult<Vec<_>>>()?;
    let summary = summarize(&results)?;
    write_text(&dir.join(AGGREGATE_FILE), &aggregate_csv(&results, &summary)?)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok((results, summary))
}
