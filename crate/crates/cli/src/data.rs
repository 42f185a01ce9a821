//! Dataset loading, synthesis and feature extraction.

use std::path::{Path, PathBuf};

use uavlab::dsp::{
    dataset_path, derive_seed, read_dataset_dir, synth_sample, write_wav, StandardWaveform, SynthClassParams,
    N_CLASSES,
};
use uavlab::features::container::{self, NamedArray, VERSION_GRID};
use uavlab::features::FrontEnd;

use crate::config::DatasetConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, csv_string, write_text};

pub struct Dataset {
    pub waves: Vec<StandardWaveform>,
    /// Source path relative to the dataset root, or `synth/<index>`.
    pub names: Vec<String>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.waves.iter().map(|w| w.label().expect("datasets are labeled")).collect()
    }
}

fn synth_params(cfg: &DatasetConfig) -> CliResult<Vec<SynthClassParams>> {
    (0..N_CLASSES)
        .map(|c| {
            let p = SynthClassParams::for_class(c).with_snr(cfg.snr_db);
            p.validate()?;
            Ok(p)
        })
        .collect()
}

/// `(class, index within class, seed)` of every synthetic sample, class-major.
fn synth_plan(cfg: &DatasetConfig) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
    (0..N_CLASSES).flat_map(move |c| {
        (0..cfg.n_per_class).map(move |i| (c, i, derive_seed(cfg.synth_seed, (c * cfg.n_per_class + i) as u64)))
    })
}

pub fn load(cfg: &DatasetConfig) -> CliResult<Dataset> {
    if let Some(root) = &cfg.path {
        let entries = read_dataset_dir(root)?;
        if entries.is_empty() {
            return Err(CliError::Runtime(format!("{}: no WAV files found", root.display())));
        }
        let names = entries
            .iter()
            .map(|(p, _)| p.strip_prefix(root).unwrap_or(p).display().to_string())
            .collect();
        let waves = entries.into_iter().map(|(_, w)| w).collect();
        return Ok(Dataset { waves, names });
    }
    let params = synth_params(cfg)?;
    let (mut waves, mut names) = (Vec::new(), Vec::new());
    for (k, (c, _, seed)) in synth_plan(cfg).enumerate() {
        waves.push(synth_sample(&params[c], seed));
        names.push(format!("synth/{k}"));
    }
    Ok(Dataset { waves, names })
}

/// Writes the synthetic corpus as WAVs plus `manifest.csv`; returns the file count.
pub fn synth_to_dir(cfg: &DatasetConfig, out: &Path) -> CliResult<usize> {
    let params = synth_params(cfg)?;
    let mut rows = Vec::new();
    for (c, i, seed) in synth_plan(cfg) {
        let path = dataset_path(out, c, &format!("{i:04}"));
        create_dir(path.parent().expect("dataset path has a class directory"))?;
        write_wav(&path, &synth_sample(&params[c], seed))?;
        let rel = path.strip_prefix(out).unwrap_or(&path).display().to_string();
        rows.push(vec![rel, c.to_string(), seed.to_string()]);
    }
    let header = ["path", "class", "seed"].map(String::from);
    write_text(&out.join("manifest.csv"), &csv_string(&header, &rows)?)?;
    Ok(rows.len())
}

/// Feature maps of every sample in one container, plus a CSV index of names and labels.
pub fn extract_to_dir(data: &Dataset, front_end: FrontEnd, out: &Path) -> CliResult<PathBuf> {
    create_dir(out)?;
    let tag = match front_end {
        FrontEnd::Cnn => "cnn".to_string(),
        FrontEnd::Ast { frames } => format!("ast{frames}"),
    };
    let mut arrays = Vec::with_capacity(data.waves.len());
    let mut rows = Vec::with_capacity(data.waves.len());
    for (k, (w, name)) in data.waves.iter().zip(&data.names).enumerate() {
        let f = front_end.extract(w);
        let key = format!("{k:05}");
        arrays.push(NamedArray::new(key.clone(), vec![f.n_mels, f.n_frames], f.values)?);
        let label = w.label().map(|l| l.to_string()).unwrap_or_default();
        rows.push(vec![key, name.clone(), label]);
    }
    let path = out.join(format!("features-{tag}.bin"));
    container::write(&path, VERSION_GRID, &arrays)?;
    let header = ["key", "source", "class"].map(String::from);
    write_text(&out.join(format!("features-{tag}.csv")), &csv_string(&header, &rows)?)?;
    Ok(path)
}
