//! Hyper-parameter sweeps over dotted config paths.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{render_value, ExperimentConfig, Strategy, SweepConfig};
use crate::data::Dataset;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, csv_string, read_json, read_text, write_json, write_text};
use crate::pool::run_bounded;
use crate::run::{run_experiment, RunMetrics, CONFIG_FILE, METRICS_FILE};

pub const PLAN_FILE: &str = "sweep.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BEST_FILE: &str = "best_config.toml";
pub const ERROR_FILE: &str = "error.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub id: String,
    /// Rendered value of each axis, in axis order.
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axes: Vec<String>,
    pub runs: Vec<PlannedRun>,
}

/// Axis value indices of each run: the full grid (last axis fastest) or a seeded sample of it.
pub fn combinations(s: &SweepConfig) -> Vec<Vec<usize>> {
    let radices: Vec<usize> = s.axes.values().map(Vec::len).collect();
    let decode = |mut flat: usize| {
        let mut idx = vec![0; radices.len()];
        for (slot, &r) in idx.iter_mut().zip(&radices).rev() {
            *slot = flat % r;
            flat /= r;
        }
        idx
    };
    match s.strategy {
        Strategy::Grid => (0..s.grid_size()).map(decode).collect(),
        Strategy::Random { n, seed } => index::sample(&mut ChaCha8Rng::seed_from_u64(seed), s.grid_size(), n)
            .into_iter()
            .map(decode)
            .collect(),
    }
}

/// Every run's config, validated before anything is trained.
pub fn plan(cfg: &ExperimentConfig) -> CliResult<(SweepPlan, Vec<ExperimentConfig>)> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] table".into()))?;
    let axes: Vec<String> = s.axes.keys().cloned().collect();
    let mut runs = Vec::new();
    let mut configs = Vec::new();
    for (i, combo) in combinations(s).into_iter().enumerate() {
        let overrides: Vec<(String, toml::Value)> = axes
            .iter()
            .zip(&combo)
            .map(|(a, &j)| (a.clone(), s.axes[a][j].clone()))
            .collect();
        let id = format!("run-{i:03}");
        let mut run_cfg = cfg
            .with_overrides(&overrides)
            .map_err(|e| CliError::Config(format!("{id}: {e}")))?;
        run_cfg.name = id.clone();
        runs.push(PlannedRun {
            id,
            values: overrides.iter().map(|(_, v)| render_value(v)).collect(),
        });
        configs.push(run_cfg);
    }
    Ok((SweepPlan { axes, runs }, configs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub id: String,
    pub values: Vec<String>,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn accuracy(&self) -> Option<f64> {
        self.metrics.as_ref()?.selection().map(|m| m.accuracy)
    }
}

/// Rebuilds the ranked summary from the run directories alone.
pub fn summarize(dir: &Path) -> CliResult<(SweepPlan, Vec<SummaryRow>)> {
    let plan: SweepPlan = read_json(&dir.join(PLAN_FILE))?;
    let mut rows: Vec<SummaryRow> = plan
        .runs
        .iter()
        .map(|r| {
            let run_dir = dir.join(&r.id);
            let metrics_path = run_dir.join(METRICS_FILE);
            let (metrics, error) = if metrics_path.exists() {
                (Some(read_json::<RunMetrics>(&metrics_path)?), None)
            } else {
                let err = read_text(&run_dir.join(ERROR_FILE)).unwrap_or_else(|_| "did not finish".into());
                (None, Some(err.lines().next().unwrap_or_default().to_string()))
            };
            Ok(SummaryRow {
                id: r.id.clone(),
                values: r.values.clone(),
                metrics,
                error,
            })
        })
        .collect::<CliResult<_>>()?;
    rows.sort_by(|a, b| match (a.accuracy(), b.accuracy()) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.id.cmp(&b.id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.id.cmp(&b.id),
    });
    Ok((plan, rows))
}

pub fn summary_csv(plan: &SweepPlan, rows: &[SummaryRow]) -> CliResult<String> {
    let mut header = vec!["run_id".to_string()];
    header.extend(plan.axes.iter().cloned());
    header.extend(["accuracy", "f1", "wall_ms", "status"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.id.clone()];
            line.extend(r.values.iter().cloned());
            match (&r.metrics, r.metrics.as_ref().and_then(RunMetrics::selection)) {
                (Some(m), Some(sel)) => line.extend([
                    sel.accuracy.to_string(),
                    sel.macro_f1.to_string(),
                    m.wall_ms.to_string(),
                    "ok".into(),
                ]),
                _ => line.extend([
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("failed: {}", r.error.as_deref().unwrap_or("no clean evaluation split")),
                ]),
            }
            line
        })
        .collect();
    csv_string(&header, &body)
}

pub struct SweepOutcome {
    pub total: usize,
    pub failed: usize,
    pub best: Option<String>,
}

/// Runs every planned config with at most `jobs` in flight, then writes the summary.
pub fn run_sweep(cfg: &ExperimentConfig, data: &Dataset, dir: &Path, jobs: usize) -> CliResult<SweepOutcome> {
    let (plan, configs) = plan(cfg)?;
    create_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    write_json(&dir.join(PLAN_FILE), &plan)?;
    run_bounded(configs.len(), jobs, |i| {
        let run_dir = dir.join(&plan.runs[i].id);
        if let Err(e) = run_experiment(&configs[i], data, &run_dir) {
            eprintln!("{}: {e}", plan.runs[i].id);
            let _ = create_dir(&run_dir).and_then(|_| write_text(&run_dir.join(ERROR_FILE), &format!("{e}\n")));
        }
    });
    let (plan, rows) = summarize(dir)?;
    write_text(&dir.join(SUMMARY_FILE), &summary_csv(&plan, &rows)?)?;
    let best = rows.iter().find(|r| r.accuracy().is_some()).map(|r| r.id.clone());
    if let Some(id) = &best {
        let text = read_text(&dir.join(id).join(CONFIG_FILE))?;
        write_text(&dir.join(BEST_FILE), &text)?;
    }
    let failed = rows.iter().filter(|r| r.metrics.is_none()).count();
    if failed == rows.len() {
        return Err(CliError::Runtime(format!("all {failed} sweep runs failed")));
    }
    Ok(SweepOutcome {
        total: rows.len(),
        failed,
        best,
    })
}
