//! Audio I/O, standardization to mono 16 kHz 5 s clips, and the synthetic corpus.

mod resample;
mod synth;
mod wav;

use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use resample::{resample, resampled_len};
pub use synth::{
    class_name, derive_seed, harmonic_reference, synth_dataset, synth_dataset_with, synth_sample,
    SynthClassParams, CLASS_FUNDAMENTALS_HZ, DEFAULT_SNR_DB,
};
pub use wav::{load_wav, write_wav, write_wav_raw};

use crate::augment::AppliedAugmentation;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const DURATION_S: usize = 5;
pub const STANDARD_LEN: usize = DURATION_S * SAMPLE_RATE as usize;
pub const N_CLASSES: usize = 9;

/// Decoded audio as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWaveform {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl RawWaveform {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::Format("no channels".into()));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(Error::Format("channels differ in length".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a standardized waveform came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented { applied: Vec<AppliedAugmentation> },
    Synthetic { seed: u64 },
}

impl Provenance {
    pub fn is_augmented(&self) -> bool {
        matches!(self, Provenance::Augmented { .. })
    }
}

/// Mono, 16 kHz, exactly [`STANDARD_LEN`] samples.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardWaveform {
    samples: Vec<f32>,
    label: Option<usize>,
    provenance: Provenance,
}

impl StandardWaveform {
    pub fn new(samples: Vec<f32>, label: Option<usize>, provenance: Provenance) -> Result<Self> {
        if samples.len() != STANDARD_LEN {
            return Err(Error::Contract(format!(
                "standard waveform needs {STANDARD_LEN} samples, got {}",
                samples.len()
            )));
        }
        if let Some(l) = label {
            if l >= N_CLASSES {
                return Err(Error::Contract(format!("label {l} outside 0..{N_CLASSES}")));
            }
        }
        Ok(Self {
            samples,
            label,
            provenance,
        })
    }

    pub(crate) fn new_unchecked(samples: Vec<f32>, label: Option<usize>, provenance: Provenance) -> Self {
        debug_assert_eq!(samples.len(), STANDARD_LEN);
        Self {
            samples,
            label,
            provenance,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Same label, new samples, provenance rewritten.
    pub(crate) fn derive(&self, samples: Vec<f32>, provenance: Provenance) -> Self {
        Self::new_unchecked(samples, self.label, provenance)
    }

    pub fn into_raw(self) -> RawWaveform {
        RawWaveform {
            channels: vec![self.samples],
            sample_rate: SAMPLE_RATE,
        }
    }
}

/// Trailing zero padding or head-keeping clip to `len`.
pub fn fit_length(mut x: Vec<f32>, len: usize) -> Vec<f32> {
    x.resize(len, 0.0);
    x
}

/// Channel-mean mixdown, resampling to 16 kHz and pad/clip to 5 s.
pub fn standardize(raw: &RawWaveform) -> Result<StandardWaveform> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples".into()));
    }
    let n_ch = raw.channels.len() as f32;
    let mono: Vec<f32> = (0..raw.len())
        .map(|i| raw.channels.iter().map(|c| c[i]).sum::<f32>() / n_ch)
        .collect();
    let mono = if raw.sample_rate == SAMPLE_RATE {
        mono
    } else {
        resample(&mono, SAMPLE_RATE as f64 / raw.sample_rate as f64)
    };
    Ok(StandardWaveform::new_unchecked(
        fit_length(mono, STANDARD_LEN),
        None,
        Provenance::Original,
    ))
}

/// Magnitude spectrum `|DFT(x)|` for bins `0..=n/2`.
pub fn magnitude_spectrum(x: &[f32]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Frequency in Hz of the largest-magnitude DFT bin, ignoring DC. Bin width is `sr / len`.
pub fn peak_frequency(x: &[f32], sample_rate: u32) -> f64 {
    let mag = magnitude_spectrum(x);
    let bin = (1..mag.len())
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .unwrap_or(0);
    bin as f64 * sample_rate as f64 / x.len() as f64
}

/// Loads `<root>/<class>_<name>/<id>.wav`, standardizing each file.
pub fn read_dataset_dir(root: impl AsRef<Path>) -> Result<Vec<(PathBuf, StandardWaveform)>> {
    let root = root.as_ref();
    let mut class_dirs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let class = name
            .split_once('_')
            .and_then(|(idx, _)| idx.parse::<usize>().ok())
            .filter(|&c| c < N_CLASSES)
            .ok_or_else(|| Error::Format(format!("{}: not a <class>_<name> directory", path.display())))?;
        class_dirs.push((class, path));
    }
    class_dirs.sort();
    let mut out = Vec::new();
    for (class, dir) in class_dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .collect();
        files.sort();
        for f in files {
            let w = standardize(&load_wav(&f)?)?.with_label(Some(class));
            out.push((f, w));
        }
    }
    Ok(out)
}

/// Path of a sample inside the dataset layout.
pub fn dataset_path(root: impl AsRef<Path>, class: usize, sample_id: &str) -> PathBuf {
    root.as_ref()
        .join(format!("{class}_{}", class_name(class)))
        .join(format!("{sample_id}.wav"))
}
