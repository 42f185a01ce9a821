use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch, EpochRecord, MetricsReport, RunLog, Sample};
use crate::augment::InflationConfig;
use crate::autodiff::{Adam, AdamConfig, Element, Graph, Mode, Tensor};
use crate::dsp::derive_seed;
use crate::error::{Error, Result};
use crate::models::Model;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;
const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Samples per forward pass.
    pub batch_size: usize,
    /// Micro-batches whose gradients are averaged into one optimizer step.
    pub accumulation_steps: usize,
    pub epochs: usize,
    /// Epochs without a val-accuracy improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Applied to the train and train_val splits only.
    pub augmentation: Option<InflationConfig>,
    pub eval_batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: 1e-3,
            batch_size: 8,
            accumulation_steps: 2,
            epochs: 20,
            early_stop_patience: 5,
            seed: 0,
            augmentation: None,
            eval_batch_size: EVAL_BATCH,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation_steps == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config(
                "batch_size, accumulation_steps and eval_batch_size must be at least 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam needs betas in [0, 1) and a positive eps".into()));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T = f32> {
    /// Weights from the best val epoch, or the last epoch without a val set.
    pub model: Model<T>,
    pub log: RunLog,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub optimizer_steps: usize,
}

fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Summed cross-entropy of a `[B, C]` logit block, in f64.
fn summed_ce<T: Element>(logits: &[T], labels: &[usize], c: usize) -> f64 {
    logits
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| {
            let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum()
}

/// Metrics without the augmentation check, for monitoring during training.
fn measure<T: Element>(model: &Model<T>, set: &[Sample], batch_size: usize) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let c = model.n_classes();
    let (mut preds, mut labels, mut loss) = (Vec::with_capacity(set.len()), Vec::with_capacity(set.len()), 0.0);
    for chunk in set.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch::<T>(&refs)?;
        let logits = model.predict(x)?;
        loss += summed_ce(logits.data(), &y, c);
        preds.extend(logits.data().chunks(c).map(argmax));
        labels.extend(y);
    }
    MetricsReport::from_predictions(&labels, &preds, c, loss / set.len() as f64)
}

/// Clean-set metrics of `model`.
///
/// Refuses any sample derived from an augmented waveform.
pub fn evaluate<T: Element>(model: &Model<T>, eval_set: &[Sample]) -> Result<MetricsReport> {
    if let Some(i) = eval_set.iter().position(|s| s.augmented) {
        return Err(Error::Protocol(format!(
            "sample {i} of the evaluation set comes from an augmented waveform"
        )));
    }
    measure(model, eval_set, EVAL_BATCH)
}

fn accumulate<T: Element>(acc: &mut HashMap<String, Tensor<T>>, grads: HashMap<String, Tensor<T>>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

/// Minimizes cross-entropy with Adam.
///
/// Each optimizer step averages the gradients of `accumulation_steps`
/// consecutive micro-batches of the epoch's shuffled order. With a val set,
/// the weights of the first epoch reaching the best val accuracy are returned
/// and training stops after `early_stop_patience` epochs without improvement.
pub fn train<T: Element>(
    mut model: Model<T>,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if val_set.is_some_and(<[Sample]>::is_empty) {
        return Err(Error::EmptyInput("validation set is empty".into()));
    }
    let c = model.n_classes();
    let mut opt = Adam::new(cfg.adam());
    let mut log = RunLog::default();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let (mut stale, mut step, mut micro, mut last_epoch) = (0, 0, 0u64, 0);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_STREAM, epoch as u64)));
        let (mut preds, mut labels, mut loss_sum) = (Vec::new(), Vec::new(), 0.0);

        for group in order.chunks(cfg.batch_size * cfg.accumulation_steps) {
            let mut acc = HashMap::new();
            let micro_batches: Vec<&[usize]> = group.chunks(cfg.batch_size).collect();
            for mb in &micro_batches {
                let refs: Vec<&Sample> = mb.iter().map(|&i| &train_set[i]).collect();
                let (x, y) = batch::<T>(&refs)?;
                let mut g = Graph::new(Mode::Train, derive_seed(cfg.seed ^ DROPOUT_STREAM, micro));
                micro += 1;
                let xi = g.constant(x);
                let logits = model.forward(&mut g, xi)?;
                let ce = g.cross_entropy(logits, &y)?;
                loss_sum += summed_ce(g.value(logits).data(), &y, c);
                preds.extend(g.value(logits).data().chunks(c).map(argmax));
                labels.extend_from_slice(&y);
                let loss = match model.regularizer(&mut g)? {
                    Some(r) => g.add(ce, r)?,
                    None => ce,
                };
                let grads = g.backward(loss)?.by_name();
                model.apply_buffer_updates(g.take_buffer_updates())?;
                accumulate(&mut acc, grads);
            }
            let inv = T::lit(1.0 / micro_batches.len() as f64);
            for g in acc.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v = *v * inv);
            }
            model.params_mut().apply_adam(&mut opt, &acc);
            step += 1;
            model.after_step(&acc, step)?;
        }

        let train_metrics = MetricsReport::from_predictions(&labels, &preds, c, loss_sum / train_set.len() as f64)?;
        log.push(EpochRecord::new(epoch, "train", &train_metrics, started.elapsed().as_millis() as u64));
        last_epoch = epoch;

        let Some(val) = val_set else { continue };
        let started = Instant::now();
        let m = measure(&model, val, cfg.eval_batch_size)?;
        log.push(EpochRecord::new(epoch, "val", &m, started.elapsed().as_millis() as u64));
        if best.as_ref().is_none_or(|(a, _, _)| m.accuracy > *a) {
            best = Some((m.accuracy, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(match best {
        Some((acc, epoch, best_model)) => TrainOutcome {
            model: best_model,
            log,
            best_epoch: epoch,
            best_val_accuracy: Some(acc),
            optimizer_steps: step,
        },
        None => TrainOutcome {
            model,
            log,
            best_epoch: last_epoch,
            best_val_accuracy: None,
            optimizer_steps: step,
        },
    })
}
