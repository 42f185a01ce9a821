//! Plots and tables from run, sweep and k-fold directories, or from a WAV file.

use std::path::{Path, PathBuf};

use uavlab::dsp::{load_wav, standardize};
use uavlab::features::melspec_cnn;
use uavlab::trainkit::{FoldResult, RunLog};

use crate::error::{CliError, CliResult};
use crate::io::{create_dir, csv_string, read_json, write_text};
use crate::kfold::{fold_dir, FOLDS_FILE, RESULT_FILE};
use crate::run::{RunMetrics, METRICS_FILE, RUNLOG_FILE};
use crate::svg::{heatmap, line_chart, parallel_coordinates, waveform_panel, Axis};
use crate::sweep::{summarize, summary_csv, PLAN_FILE, SUMMARY_FILE};

fn emit(out: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let path = out.join(name);
    write_text(&path, text)?;
    written.push(path);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_report(dir: &Path, out: &Path, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let log = RunLog::read(dir.join(RUNLOG_FILE))?;
    let epochs = log.epochs();
    let pick = |split: &str, f: fn(&uavlab::trainkit::EpochRecord) -> f64| -> Vec<Option<f64>> {
        let mut v = vec![None; epochs];
        for r in log.split(split) {
            v[r.epoch - 1] = Some(f(r));
        }
        v
    };
    let (tl, vl) = (pick("train", |r| r.loss), pick("val", |r| r.loss));
    let (ta, va) = (pick("train", |r| r.accuracy), pick("val", |r| r.accuracy));
    let header = ["epoch", "train_loss", "val_loss", "train_accuracy", "val_accuracy"].map(String::from);
    let rows: Vec<Vec<String>> = (0..epochs)
        .map(|e| vec![(e + 1).to_string(), fmt_opt(tl[e]), fmt_opt(vl[e]), fmt_opt(ta[e]), fmt_opt(va[e])])
        .collect();
    emit(out, "loss_curve.csv", &csv_string(&header, &rows)?, written)?;

    let series = |name: &str, v: &[Option<f64>]| {
        let pts: Vec<(f64, f64)> = v
            .iter()
            .enumerate()
            .filter_map(|(e, y)| y.map(|y| ((e + 1) as f64, y)))
            .collect();
        (!pts.is_empty()).then(|| (name.to_string(), pts))
    };
    let losses: Vec<_> = [series("train", &tl), series("val", &vl)].into_iter().flatten().collect();
    emit(out, "loss_curve.svg", &line_chart("Loss", "epoch", "cross-entropy", &losses), written)?;
    let accs: Vec<_> = [series("train", &ta), series("val", &va)].into_iter().flatten().collect();
    emit(out, "accuracy_curve.svg", &line_chart("Accuracy", "epoch", "accuracy", &accs), written)?;

    let metrics_path = dir.join(METRICS_FILE);
    if metrics_path.exists() {
        let metrics: RunMetrics = read_json(&metrics_path)?;
        let (name, report) = match (&metrics.test, &metrics.test_val) {
            (Some(t), _) => ("test", t),
            (None, Some(v)) => ("test_val", v),
            (None, None) => return Ok(()),
        };
        let m: Vec<Vec<f64>> = report
            .confusion
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let title = format!("Confusion matrix ({name}, accuracy {:.4})", report.accuracy);
        emit(out, "confusion.svg", &heatmap(&title, "predicted", "true", &m, true), written)?;
    }
    Ok(())
}

fn sweep_report(dir: &Path, out: &Path, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let (plan, rows) = summarize(dir)?;
    emit(out, SUMMARY_FILE, &summary_csv(&plan, &rows)?, written)?;
    let done: Vec<_> = rows.iter().filter(|r| r.accuracy().is_some()).collect();
    let mut axes: Vec<Axis> = plan
        .axes
        .iter()
        .enumerate()
        .map(|(k, name)| Axis::infer(name, &done.iter().map(|r| r.values[k].clone()).collect::<Vec<_>>()))
        .collect();
    axes.push(Axis::Numeric {
        name: "accuracy".into(),
        values: done.iter().filter_map(|r| r.accuracy()).collect(),
        log: false,
    });
    emit(
        out,
        "parallel_coordinates.svg",
        &parallel_coordinates("Sweep", &axes),
        written,
    )
}

fn kfold_report(dir: &Path, out: &Path, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let plan: uavlab::trainkit::FoldPlan = read_json(&dir.join(FOLDS_FILE))?;
    let results: Vec<FoldResult> = (0..plan.k)
        .filter_map(|i| read_json(&fold_dir(dir, i).join(RESULT_FILE)).ok())
        .collect();
    if results.is_empty() {
        return Err(CliError::Runtime(format!("{}: no finished folds", dir.display())));
    }
    let pts = |f: fn(&FoldResult) -> f64| results.iter().map(|r| (r.fold as f64, f(r))).collect::<Vec<_>>();
    let series = vec![
        ("accuracy".to_string(), pts(|r| r.metrics.accuracy)),
        ("macro F1".to_string(), pts(|r| r.metrics.macro_f1)),
    ];
    emit(out, "kfold.svg", &line_chart("Per-fold results", "fold", "score", &series), written)
}

fn wav_report(path: &Path, out: &Path, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let w = standardize(&load_wav(path)?)?;
    let mel = melspec_cnn(&w);
    let spec: Vec<Vec<f64>> = (0..mel.n_mels)
        .map(|m| (0..mel.n_frames).map(|t| mel.get(m, t) as f64).collect())
        .collect();
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "audio".into());
    let title = format!("{stem}: waveform and log-mel spectrogram");
    emit(out, &format!("{stem}_panel.svg"), &waveform_panel(&title, w.samples(), w.sample_rate(), &spec), written)?;
    let rate = w.sample_rate() as f64;
    let rows: Vec<Vec<String>> = w
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i as f64 / rate).to_string(), v.to_string()])
        .collect();
    emit(out, &format!("{stem}_waveform.csv"), &csv_string(&["time_s".into(), "amplitude".into()], &rows)?, written)?;
    let header: Vec<String> = std::iter::once("mel".to_string())
        .chain((0..mel.n_frames).map(|t| format!("frame_{t}")))
        .collect();
    let rows: Vec<Vec<String>> = spec
        .iter()
        .enumerate()
        .map(|(m, row)| std::iter::once(m.to_string()).chain(row.iter().map(|v| v.to_string())).collect())
        .collect();
    emit(out, &format!("{stem}_spectrogram.csv"), &csv_string(&header, &rows)?, written)
}

/// Writes every report `target` supports into `out` (default: next to the input).
pub fn report(target: &Path, out: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    if target.is_file() {
        if target.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
                target.parent().map(Path::to_path_buf).unwrap_or_default()
            });
            create_dir(&out)?;
            wav_report(target, &out, &mut written)?;
            return Ok(written);
        }
        return Err(CliError::Runtime(format!("{}: not a WAV file or a directory", target.display())));
    }
    let out = out.unwrap_or(target).to_path_buf();
    create_dir(&out)?;
    if target.join(RUNLOG_FILE).exists() {
        run_report(target, &out, &mut written)?;
    } else if target.join(PLAN_FILE).exists() {
        sweep_report(target, &out, &mut written)?;
    } else if target.join(FOLDS_FILE).exists() {
        kfold_report(target, &out, &mut written)?;
    } else {
        return Err(CliError::Runtime(format!(
            "{}: no run log, sweep plan or fold plan found",
            target.display()
        )));
    }
    Ok(written)
}
