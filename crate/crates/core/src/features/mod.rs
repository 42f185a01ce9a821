//! STFT, mel filterbank and the two log-mel front-ends.
//!
//! The CNN front-end (`n_fft` 1024, hop 512, 128 HTK mels, centered) turns a
//! 5 s clip into 128 × 157; three 2×2 pools take that to 16 × 19, and with 64
//! channels the flatten size is 19,456. The transformer front-end uses 25 ms
//! windows every 10 ms, pads the time axis to a fixed frame count and
//! normalizes with the checkpoint's published mean and standard deviation.

pub mod container;
mod mel;
mod stft;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use stft::{istft, stft, ComplexGrid, StftConfig, Window};

use crate::dsp::{StandardWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 128;
pub const LOG_FLOOR: f64 = 1e-10;

pub const CNN_N_FFT: usize = 1024;
pub const CNN_HOP: usize = 512;
pub const CNN_FRAMES: usize = 157;

pub const AST_WIN: usize = 400;
pub const AST_HOP: usize = 160;
pub const AST_N_FFT: usize = 512;
pub const AST_FMIN: f64 = 20.0;
pub const AST_FRAMES: usize = 1024;
pub const AST_MEAN: f64 = -4.267_739_3;
pub const AST_STD: f64 = 4.568_997_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScale {
    LogMel,
    NormalizedLogMel,
}

/// `[n_mels × n_frames]` row-major grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f32>,
    pub scale: FeatureScale,
}

impl FeatureMap {
    pub fn new(n_mels: usize, n_frames: usize, values: Vec<f32>, scale: FeatureScale) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::shape(
                "feature_map",
                format!("{} values for {n_mels} × {n_frames}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature map holds non-finite values".into()));
        }
        Ok(Self {
            n_mels,
            n_frames,
            values,
            scale,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    /// Mean over frames of each mel row.
    pub fn time_average(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_frames)
            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() / self.n_frames as f64)
            .collect()
    }
}

fn cnn_bank() -> &'static MelFilterbank {
    static BANK: OnceLock<MelFilterbank> = OnceLock::new();
    BANK.get_or_init(|| mel_filterbank(N_MELS, CNN_N_FFT, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0).expect("valid"))
}

fn ast_bank() -> &'static MelFilterbank {
    static BANK: OnceLock<MelFilterbank> = OnceLock::new();
    BANK.get_or_init(|| mel_filterbank(N_MELS, AST_N_FFT, SAMPLE_RATE, AST_FMIN, SAMPLE_RATE as f64 / 2.0).expect("valid"))
}

/// Filterbank behind [`melspec_cnn`].
pub fn cnn_filterbank() -> &'static MelFilterbank {
    cnn_bank()
}

fn log_mel(samples: &[f32], cfg: &StftConfig, bank: &MelFilterbank) -> Result<(Vec<f64>, usize)> {
    let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let grid = stft(&x, cfg)?;
    let mel = bank.apply(&grid.power(), grid.n_frames);
    Ok((mel.into_iter().map(|v| (v + LOG_FLOOR).ln()).collect(), grid.n_frames))
}

/// 128 × 157 log-mel power spectrogram for the CNN.
pub fn melspec_cnn(w: &StandardWaveform) -> FeatureMap {
    let cfg = StftConfig::hann(CNN_N_FFT, CNN_HOP);
    let (values, frames) = log_mel(w.samples(), &cfg, cnn_bank()).expect("fixed configuration");
    debug_assert_eq!(frames, CNN_FRAMES);
    FeatureMap {
        n_mels: N_MELS,
        n_frames: frames,
        values: values.into_iter().map(|v| v as f32).collect(),
        scale: FeatureScale::LogMel,
    }
}

pub fn ast_stft_config() -> StftConfig {
    StftConfig {
        n_fft: AST_N_FFT,
        win_length: AST_WIN,
        hop_length: AST_HOP,
        window: Window::Hann,
        center: false,
    }
}

/// Normalized log-mel with the time axis padded with zeros (or truncated) to `target_frames`.
pub fn melspec_ast_frames(w: &StandardWaveform, target_frames: usize) -> FeatureMap {
    let cfg = ast_stft_config();
    let (values, frames) = log_mel(w.samples(), &cfg, ast_bank()).expect("fixed configuration");
    let mut out = Vec::with_capacity(N_MELS * target_frames);
    for m in 0..N_MELS {
        for t in 0..target_frames {
            let v = if t < frames { values[m * frames + t] } else { 0.0 };
            out.push(((v - AST_MEAN) / (2.0 * AST_STD)) as f32);
        }
    }
    FeatureMap {
        n_mels: N_MELS,
        n_frames: target_frames,
        values: out,
        scale: FeatureScale::NormalizedLogMel,
    }
}

/// 128 × 1024 transformer input.
pub fn melspec_ast(w: &StandardWaveform) -> FeatureMap {
    melspec_ast_frames(w, AST_FRAMES)
}

/// Frames the transformer front-end produces before padding.
pub fn ast_frame_count(n_samples: usize) -> usize {
    ast_stft_config().n_frames(n_samples)
}

/// Which front-end a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrontEnd {
    Cnn,
    Ast { frames: usize },
}

impl FrontEnd {
    pub fn extract(&self, w: &StandardWaveform) -> FeatureMap {
        match *self {
            FrontEnd::Cnn => melspec_cnn(w),
            FrontEnd::Ast { frames } => melspec_ast_frames(w, frames),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            FrontEnd::Cnn => (N_MELS, CNN_FRAMES),
            FrontEnd::Ast { frames } => (N_MELS, frames),
        }
    }
}
