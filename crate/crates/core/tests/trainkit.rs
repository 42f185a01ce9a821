use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavlab::augment::{AugmentationKind, AugmentationSpec, InflationConfig};
use uavlab::dsp::synth_dataset;
use uavlab::features::{FeatureMap, FeatureScale, FrontEnd};
use uavlab::models::{AstConfig, CnnConfig, Model, ModelConfig};
use uavlab::trainkit::{
    evaluate, make_folds, prepare_sets, run_kfold, stratified_split, summarize, train, FoldResult, MetricsReport,
    RunLog, Sample, SplitSpec, TrainConfig,
};
use uavlab::Error;

fn balanced(n_per_class: usize) -> Vec<usize> {
    (0..9 * n_per_class).map(|i| i % 9).collect()
}

fn per_class(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; 9];
    for &i in idx {
        counts[labels[i]] += 1;
    }
    counts
}

#[test]
fn split_of_900_is_60_20_10_10() {
    let labels = balanced(100);
    let s = stratified_split(&labels, &SplitSpec::default()).unwrap();
    assert_eq!(s.sizes(), [540, 180, 90, 90]);
    for (part, want) in s.parts().into_iter().zip([60, 20, 10, 10]) {
        assert_eq!(per_class(&labels, part), vec![want; 9]);
    }
    let all: HashSet<usize> = s.parts().into_iter().flatten().copied().collect();
    assert_eq!(all.len(), 900);
}

#[test]
fn split_is_deterministic_per_seed() {
    let labels = balanced(30);
    let spec = SplitSpec {
        seed: 11,
        ..SplitSpec::default()
    };
    assert_eq!(stratified_split(&labels, &spec).unwrap(), stratified_split(&labels, &spec).unwrap());
    let other = SplitSpec { seed: 12, ..spec };
    assert_ne!(stratified_split(&labels, &spec).unwrap(), stratified_split(&labels, &other).unwrap());
}

#[test]
fn degenerate_split_puts_everything_in_train() {
    let labels = balanced(3);
    let spec = SplitSpec {
        fractions: [1.0, 0.0, 0.0, 0.0],
        ..SplitSpec::default()
    };
    let s = stratified_split(&labels, &spec).unwrap();
    assert_eq!(s.sizes(), [27, 0, 0, 0]);
}

#[test]
fn split_errors() {
    let mut labels = balanced(10);
    labels.extend([9, 9, 9]);
    let err = stratified_split(&labels, &SplitSpec::default()).unwrap_err();
    assert!(matches!(&err, Error::Split(m) if m.contains("class 9")), "{err}");
    let bad = SplitSpec {
        fractions: [0.5, 0.2, 0.1, 0.1],
        ..SplitSpec::default()
    };
    assert!(matches!(stratified_split(&balanced(10), &bad), Err(Error::Split(_))));
    let negative = SplitSpec {
        fractions: [1.2, -0.2, 0.0, 0.0],
        ..SplitSpec::default()
    };
    assert!(matches!(stratified_split(&balanced(10), &negative), Err(Error::Split(_))));
}

#[test]
fn five_folds_of_900() {
    let labels = balanced(100);
    let plan = make_folds(&labels, 5, 3).unwrap();
    assert_eq!(plan.fold_sizes(), vec![180; 5]);
    let mut seen = vec![0; 900];
    for f in 0..5 {
        let (train, eval) = plan.fold(f).unwrap();
        assert_eq!((train.len(), eval.len()), (720, 180));
        assert_eq!(per_class(&labels, &eval), vec![20; 9]);
        eval.iter().for_each(|&i| seen[i] += 1);
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert!(plan.fold(5).is_err());
}

#[test]
fn fold_errors() {
    assert!(matches!(make_folds(&balanced(10), 1, 0), Err(Error::Split(_))));
    let err = make_folds(&balanced(4), 5, 0).unwrap_err().to_string();
    assert!(err.contains("class 0"), "{err}");
}

fn labels_strategy() -> impl Strategy<Value = Vec<usize>> {
    (90usize..=2000, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| if i < 45 { i % 9 } else { rng.gen_range(0..9) }).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_partitions_and_stratifies(labels in labels_strategy(), seed in any::<u64>()) {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let s = stratified_split(&labels, &spec).unwrap();
        let mut seen = vec![0; labels.len()];
        s.parts().into_iter().flatten().for_each(|&i| seen[i] += 1);
        prop_assert!(seen.iter().all(|&c| c == 1));
        let totals = per_class(&labels, &(0..labels.len()).collect::<Vec<_>>());
        for (part, frac) in s.parts().into_iter().zip(spec.fractions) {
            for (got, total) in per_class(&labels, part).into_iter().zip(&totals) {
                prop_assert!((got as f64 - frac * *total as f64).abs() < 1.0 + 1e-9);
            }
        }
        prop_assert_eq!(s, stratified_split(&labels, &spec).unwrap());
    }

    #[test]
    fn folds_partition_and_stratify(labels in labels_strategy(), seed in any::<u64>()) {
        let plan = make_folds(&labels, 5, seed).unwrap();
        prop_assert_eq!(plan.assignments.len(), labels.len());
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..9 {
            let mut counts = [0usize; 5];
            for (i, &f) in plan.assignments.iter().enumerate() {
                if labels[i] == class {
                    counts[f] += 1;
                }
            }
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(plan, make_folds(&labels, 5, seed).unwrap());
    }
}

#[test]
fn metrics_hand_computed_example() {
    let m = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2, 0.0).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert_eq!(m.macro_f1, 11.0 / 15.0);
    assert!((m.macro_precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((m.macro_recall - 0.75).abs() < 1e-12);
    assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 2]]);
}

#[test]
fn metrics_perfect_and_degenerate() {
    let labels = balanced(10);
    let m = MetricsReport::from_predictions(&labels, &labels, 9, 0.0).unwrap();
    assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));

    let preds = vec![4; labels.len()];
    let m = MetricsReport::from_predictions(&labels, &preds, 9, 0.0).unwrap();
    assert!((m.accuracy - 1.0 / 9.0).abs() < 1e-12);
    let f1_4 = 2.0 * (1.0 / 9.0) / (1.0 / 9.0 + 1.0);
    assert!((m.macro_f1 - f1_4 / 9.0).abs() < 1e-12);
    assert!((m.macro_recall - 1.0 / 9.0).abs() < 1e-12);
    for (c, row) in m.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), 10, "row {c}");
    }
    assert_eq!(m.total(), 90);
    for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(MetricsReport::from_predictions(&[0], &[0, 1], 2, 0.0).is_err());
    assert!(MetricsReport::from_predictions(&[0], &[2], 2, 0.0).is_err());
}

#[test]
fn confusion_csv_layout() {
    let m = MetricsReport::from_predictions(&[0, 1], &[1, 1], 2, 0.0).unwrap();
    assert_eq!(m.confusion_csv(), "true\\pred,0,1\n0,0,1\n1,0,1\n");
}

/// Random feature maps of the toy transformer's input size.
fn noise_samples(n: usize, n_classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            features: FeatureMap::new(
                128,
                128,
                (0..128 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                FeatureScale::NormalizedLogMel,
            )
            .unwrap(),
            label: i % n_classes,
            augmented: false,
        })
        .collect()
}

/// Two classes told apart by which half of the mel axis carries energy.
fn separable_samples(n: usize, (mels, frames): (usize, usize), seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let values = (0..mels * frames)
                .map(|k| {
                    let hot = (k / frames < mels / 2) == (label == 0);
                    (if hot { 1.0 } else { -1.0 }) + rng.gen_range(-0.3..0.3)
                })
                .collect();
            Sample {
                features: FeatureMap::new(mels, frames, values, FeatureScale::LogMel).unwrap(),
                label,
                augmented: false,
            }
        })
        .collect()
}

fn toy_cfg(n_classes: usize, dropout_p: f64) -> ModelConfig {
    ModelConfig::Ast(AstConfig {
        n_classes,
        dropout_p,
        ..AstConfig::toy()
    })
}

#[test]
fn evaluate_rejects_augmented_samples() {
    let model = Model::<f32>::build(&toy_cfg(9, 0.0), 0).unwrap();
    let mut set = noise_samples(4, 9, 1);
    assert!(evaluate(&model, &set).is_ok());
    set[2].augmented = true;
    assert!(matches!(evaluate(&model, &set), Err(Error::Protocol(_))));
    assert!(matches!(evaluate(&model, &[]), Err(Error::EmptyInput(_))));
}

#[test]
fn augmentation_never_reaches_clean_splits() {
    let waves = synth_dataset(4, 2);
    let labels: Vec<usize> = waves.iter().map(|w| w.label().unwrap()).collect();
    let split = stratified_split(&labels, &SplitSpec::default()).unwrap();
    let aug = InflationConfig::new(1, vec![AugmentationSpec::with_default_range(AugmentationKind::PolarityInversion)]);
    let front_end = FrontEnd::Ast { frames: 128 };
    let sets = prepare_sets(&waves, &split, front_end, Some(&aug), 0).unwrap();
    assert_eq!(sets.train.len(), 2 * split.train.len());
    assert_eq!(sets.train_val.len(), 2 * split.train_val.len());
    assert!(sets.train.iter().any(|s| s.augmented));
    assert!(sets.test.iter().chain(&sets.test_val).all(|s| !s.augmented));
    let model = Model::<f32>::build(&toy_cfg(9, 0.0), 0).unwrap();
    assert!(matches!(evaluate(&model, &sets.train), Err(Error::Protocol(_))));
    assert!(evaluate(&model, &sets.test).is_ok());
}

#[test]
fn accumulation_matches_the_larger_batch() {
    let data = noise_samples(16, 9, 4);
    let model = Model::<f64>::build(&toy_cfg(9, 0.0), 7).unwrap();
    let run = |batch_size, accumulation_steps| {
        let cfg = TrainConfig {
            batch_size,
            accumulation_steps,
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, None, &cfg).unwrap();
        assert_eq!(out.optimizer_steps, 1);
        out.model
    };
    let (a, b) = (run(8, 2), run(16, 1));
    let mut moved = 0.0f64;
    for ((na, pa), (nb, pb)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(na, nb);
        let diff = pa.value.max_abs_diff(&pb.value);
        assert!(diff <= 1e-5, "{na}: {diff}");
        moved = moved.max(pa.value.max_abs_diff(model.params().get(na).unwrap()));
    }
    assert!(moved > 1e-4, "the step must change the weights");
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let data = noise_samples(12, 9, 5);
    let model = Model::<f32>::build(&toy_cfg(9, 0.1), 1).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        batch_size: 4,
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = train(model.clone(), &data, None, &cfg).unwrap();
    for ((_, before), (_, after)) in model.params().iter().zip(out.model.params().iter()) {
        assert_eq!(before.value.data(), after.value.data());
    }
}

#[test]
fn train_rejects_bad_input() {
    let model = Model::<f32>::build(&toy_cfg(9, 0.0), 1).unwrap();
    let cfg = TrainConfig::default();
    assert!(matches!(train(model.clone(), &[], None, &cfg), Err(Error::EmptyInput(_))));
    let data = noise_samples(4, 9, 1);
    assert!(matches!(train(model.clone(), &data, Some(&[]), &cfg), Err(Error::EmptyInput(_))));
    let zero = TrainConfig {
        accumulation_steps: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(model, &data, None, &zero), Err(Error::Config(_))));
}

#[test]
fn cnn_fits_separable_toy_and_loss_falls() {
    let cfg = ModelConfig::Cnn(CnnConfig {
        n_classes: 2,
        ..CnnConfig::default()
    });
    let data = separable_samples(16, cfg.front_end().shape(), 3);
    let model = Model::<f32>::build(&cfg, 2).unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        epochs: 50,
        early_stop_patience: 0,
        ..TrainConfig::default()
    };
    let out = train(model, &data, None, &tc).unwrap();
    let train_log: Vec<_> = out.log.split("train").collect();
    assert_eq!(train_log.len(), 50);
    assert!(train_log[9].loss < train_log[0].loss);
    assert_eq!(train_log.last().unwrap().accuracy, 1.0);
}

#[test]
fn best_val_weights_are_returned() {
    let cfg = toy_cfg(2, 0.1);
    let data = separable_samples(24, cfg.front_end().shape(), 8);
    let val = separable_samples(10, cfg.front_end().shape(), 9);
    let tc = TrainConfig {
        lr: 3e-4,
        batch_size: 4,
        epochs: 6,
        early_stop_patience: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(Model::<f32>::build(&cfg, 3).unwrap(), &data, Some(&val), &tc).unwrap();
    let vals: Vec<_> = out.log.split("val").collect();
    let max = vals.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    assert_eq!(out.best_val_accuracy, Some(max));
    let first_best = vals.iter().find(|r| r.accuracy == max).unwrap().epoch;
    assert_eq!(out.best_epoch, first_best);
    assert_eq!(evaluate(&out.model, &val).unwrap().accuracy, max);
    assert!(vals.len() <= 6 && vals.len() >= out.best_epoch);

    let again = train(Model::<f32>::build(&cfg, 3).unwrap(), &data, Some(&val), &tc).unwrap();
    assert!(out.log.same_metrics(&again.log));
    assert_eq!(RunLog::from_jsonl(&out.log.to_jsonl().unwrap()).unwrap(), out.log);
}

#[test]
fn kfold_with_frozen_model_is_near_chance() {
    let waves = synth_dataset(20, 6);
    let labels: Vec<usize> = waves.iter().map(|w| w.label().unwrap()).collect();
    let plan = make_folds(&labels, 5, 1).unwrap();
    let cfg = toy_cfg(9, 0.0);
    let factory = |fold: usize| {
        let mut m = Model::<f32>::build(&cfg, fold as u64)?;
        m.params_mut().set_trainable_where(|_| false);
        Ok(m)
    };
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (results, summary) = run_kfold(&factory, cfg.front_end(), &waves, &plan, &tc, 2).unwrap();
    assert_eq!(results.len(), 5);
    assert!(results.iter().enumerate().all(|(i, r)| r.fold == i && r.metrics.total() == 36));
    let mean = results.iter().map(|r| r.metrics.accuracy).sum::<f64>() / 5.0;
    assert!((summary.accuracy.mean - mean).abs() < 1e-12);
    assert!((mean - 1.0 / 9.0).abs() <= 0.05, "mean accuracy {mean}");
    let t = summary.time_ms;
    assert!(t.best <= t.mean && t.mean <= t.worst);
    assert_eq!(summary.rows().len(), 7);
}

#[test]
fn summary_statistics() {
    let fold = |fold, accuracy, time_ms| FoldResult {
        fold,
        metrics: MetricsReport {
            accuracy,
            macro_precision: accuracy,
            macro_recall: accuracy,
            macro_f1: accuracy,
            confusion: vec![],
            loss: 0.0,
        },
        time_ms,
    };
    let s = summarize(&[fold(0, 0.5, 30), fold(1, 0.7, 10), fold(2, 0.9, 20)]).unwrap();
    assert!((s.accuracy.mean - 0.7).abs() < 1e-12);
    assert!((s.accuracy.std - 0.2).abs() < 1e-12);
    assert_eq!((s.accuracy.best, s.accuracy.worst), (0.9, 0.5));
    assert_eq!((s.time_ms.best, s.time_ms.worst, s.time_ms.mean), (10.0, 30.0, 20.0));
    assert!(summarize(&[]).is_err());
}
