use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, featurize, inflate_samples, train, FoldPlan, MetricsReport, Sample, TrainConfig, TrainOutcome};
use crate::autodiff::Element;
use crate::dsp::{derive_seed, StandardWaveform};
use crate::error::{Error, Result};
use crate::features::FrontEnd;
use crate::models::Model;

const AUGMENT_STREAM: u64 = 0x4b46_4f4c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: MetricsReport,
    /// Augmentation, training and evaluation of the fold.
    pub time_ms: u64,
}

/// Trains a fresh model on every fold but `fold` and evaluates it on `fold`.
///
/// `clean` holds the features of `waves`; augmented copies, when configured,
/// are generated for the training folds only.
pub fn run_fold<T: Element>(
    factory: &dyn Fn(usize) -> Result<Model<T>>,
    waves: &[StandardWaveform],
    clean: &[Sample],
    plan: &FoldPlan,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<(FoldResult, TrainOutcome<T>)> {
    if clean.len() != plan.assignments.len() || waves.len() != clean.len() {
        return Err(Error::Contract(format!(
            "fold plan covers {} samples but {} waveforms and {} feature maps were given",
            plan.assignments.len(),
            waves.len(),
            clean.len()
        )));
    }
    let (train_idx, eval_idx) = plan.fold(fold)?;
    let started = Instant::now();
    let model = factory(fold)?;
    let front_end = model.front_end();
    let train_set = inflate_samples(
        waves,
        clean,
        &train_idx,
        front_end,
        cfg.augmentation.as_ref(),
        derive_seed(cfg.seed ^ AUGMENT_STREAM, fold as u64),
    )?;
    let fold_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, fold as u64),
        ..cfg.clone()
    };
    let outcome = train(model, &train_set, None, &fold_cfg)?;
    let eval_set: Vec<Sample> = eval_idx.iter().map(|&i| clean[i].clone()).collect();
    let metrics = evaluate(&outcome.model, &eval_set)?;
    let result = FoldResult {
        fold,
        metrics,
        time_ms: started.elapsed().as_millis() as u64,
    };
    Ok((result, outcome))
}

/// Mean, sample standard deviation and extremes of one metric across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub best: f64,
    pub worst: f64,
}

impl Spread {
    fn of(values: &[f64], higher_is_better: bool) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let (best, worst) = if higher_is_better { (max, min) } else { (min, max) };
        Self {
            mean,
            std: var.sqrt(),
            best,
            worst,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfoldSummary {
    pub k: usize,
    pub accuracy: Spread,
    pub f1: Spread,
    pub time_ms: Spread,
}

impl KfoldSummary {
    /// Named summary rows: accuracy and F1 (best, mean), time (worst, best, mean).
    pub fn rows(&self) -> [(&'static str, f64); 7] {
        [
            ("best_accuracy", self.accuracy.best),
            ("mean_accuracy", self.accuracy.mean),
            ("best_f1", self.f1.best),
            ("mean_f1", self.f1.mean),
            ("worst_time_ms", self.time_ms.worst),
            ("best_time_ms", self.time_ms.best),
            ("mean_time_ms", self.time_ms.mean),
        ]
    }
}

pub fn summarize(results: &[FoldResult]) -> Result<KfoldSummary> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no fold results to summarize".into()));
    }
    let pick = |f: fn(&FoldResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    Ok(KfoldSummary {
        k: results.len(),
        accuracy: Spread::of(&pick(|r| r.metrics.accuracy), true),
        f1: Spread::of(&pick(|r| r.metrics.macro_f1), true),
        time_ms: Spread::of(&pick(|r| r.time_ms as f64), false),
    })
}

/// All folds of `plan`, up to `jobs` at a time; results are in fold order.
pub fn run_kfold<T: Element>(
    factory: &(dyn Fn(usize) -> Result<Model<T>> + Sync),
    front_end: FrontEnd,
    waves: &[StandardWaveform],
    plan: &FoldPlan,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<(Vec<FoldResult>, KfoldSummary)> {
    let clean = featurize(waves, front_end)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<FoldResult>>>> = Mutex::new((0..plan.k).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, plan.k) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plan.k {
                    break;
                }
                let r = run_fold(factory, waves, &clean, plan, i, cfg).map(|(r, _)| r);
                slots.lock().expect("fold results lock")[i] = Some(r);
            });
        }
    });
    let results = slots
        .into_inner()
        .expect("fold results lock")
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&results)?;
    Ok((results, summary))
}
