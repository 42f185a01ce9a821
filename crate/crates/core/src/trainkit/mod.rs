//! Data splits, the training loop and classification metrics.

mod kfold;
mod metrics;
mod runlog;
mod split;
mod train;

pub use kfold::{run_fold, run_kfold, summarize, FoldResult, KfoldSummary, Spread};
pub use metrics::MetricsReport;
pub use runlog::{EpochRecord, RunLog};
pub use split::{make_folds, stratified_split, FoldPlan, SplitIndices, SplitSpec};
pub use train::{evaluate, train, TrainConfig, TrainOutcome};

use crate::augment::{inflate_iter, InflationConfig};
use crate::autodiff::{Element, Tensor};
use crate::dsp::{derive_seed, StandardWaveform};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FrontEnd};

/// A labeled feature map ready for a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureMap,
    pub label: usize,
    /// Derived from an augmented waveform; such samples are never evaluated.
    pub augmented: bool,
}

impl Sample {
    pub fn from_waveform(w: &StandardWaveform, front_end: FrontEnd) -> Result<Self> {
        let label = w
            .label()
            .ok_or_else(|| Error::Contract("training and evaluation need labeled waveforms".into()))?;
        Ok(Self {
            features: front_end.extract(w),
            label,
            augmented: w.provenance().is_augmented(),
        })
    }
}

pub fn featurize(waves: &[StandardWaveform], front_end: FrontEnd) -> Result<Vec<Sample>> {
    waves.iter().map(|w| Sample::from_waveform(w, front_end)).collect()
}

/// Training samples for `indices`, inflated when an augmentation config is given.
///
/// Originals reuse the features already in `clean`; only the augmented copies
/// are extracted.
pub fn inflate_samples(
    waves: &[StandardWaveform],
    clean: &[Sample],
    indices: &[usize],
    front_end: FrontEnd,
    augmentation: Option<&InflationConfig>,
    seed: u64,
) -> Result<Vec<Sample>> {
    let Some(cfg) = augmentation else {
        return Ok(indices.iter().map(|&i| clean[i].clone()).collect());
    };
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let subset: Vec<StandardWaveform> = indices.iter().map(|&i| waves[i].clone()).collect();
    let mut originals = indices.iter();
    let mut out = Vec::with_capacity(indices.len() * cfg.multiplier());
    for w in inflate_iter(&subset, cfg, seed)? {
        let w = w?;
        if w.provenance().is_augmented() {
            out.push(Sample::from_waveform(&w, front_end)?);
        } else {
            let &i = originals.next().expect("one original per input");
            out.push(clean[i].clone());
        }
    }
    Ok(out)
}

/// The four splits as model inputs.
#[derive(Clone, Debug)]
pub struct PreparedSets {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_val: Vec<Sample>,
    pub test_val: Vec<Sample>,
}

/// Featurizes a split; augmentation reaches train and train_val only.
pub fn prepare_sets(
    waves: &[StandardWaveform],
    split: &SplitIndices,
    front_end: FrontEnd,
    augmentation: Option<&InflationConfig>,
    seed: u64,
) -> Result<PreparedSets> {
    let clean = featurize(waves, front_end)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| clean[i].clone()).collect::<Vec<_>>();
    Ok(PreparedSets {
        train: inflate_samples(waves, &clean, &split.train, front_end, augmentation, derive_seed(seed, 0))?,
        train_val: inflate_samples(waves, &clean, &split.train_val, front_end, augmentation, derive_seed(seed, 2))?,
        test: pick(&split.test),
        test_val: pick(&split.test_val),
    })
}

/// Stacks samples into a `[B, mels, frames]` batch and its labels.
pub fn batch<T: Element>(samples: &[&Sample]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot batch zero samples".into()))?;
    let (m, f) = first.features.shape();
    let mut data = Vec::with_capacity(samples.len() * m * f);
    for s in samples {
        if s.features.shape() != (m, f) {
            return Err(Error::shape(
                "batch",
                format!("feature map {:?} next to {:?}", s.features.shape(), (m, f)),
            ));
        }
        data.extend(s.features.values.iter().map(|&v| T::lit(v as f64)));
    }
    let labels = samples.iter().map(|s| s.label).collect();
    Ok((Tensor::new(vec![samples.len(), m, f], data)?, labels))
}
