//! Deterministic harmonic generator standing in for recorded airframes.
//!
//! Each class is a stack of harmonics of a fixed fundamental, amplitude
//! modulated at a blade-pass rate, plus white noise at a target SNR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Provenance, StandardWaveform, N_CLASSES, SAMPLE_RATE, STANDARD_LEN};

pub const CLASS_FUNDAMENTALS_HZ: [f64; N_CLASSES] = [110.0, 150.0, 190.0, 230.0, 270.0, 310.0, 350.0, 390.0, 430.0];
pub const DEFAULT_HARMONICS: usize = 8;
pub const DEFAULT_DECAY: f64 = 0.7;
pub const DEFAULT_SNR_DB: f64 = 20.0;
const AM_DEPTH: f64 = 0.5;
const PEAK: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClassParams {
    pub class_id: usize,
    pub fundamental_hz: f64,
    pub n_harmonics: usize,
    pub harmonic_decay: f64,
    pub am_rate_hz: f64,
    /// `f64::INFINITY` disables noise.
    pub noise_snr_db: f64,
}

impl SynthClassParams {
    /// Default parameters of class `class_id` (0..9).
    pub fn for_class(class_id: usize) -> Self {
        assert!(class_id < N_CLASSES, "class {class_id} out of range");
        Self {
            class_id,
            fundamental_hz: CLASS_FUNDAMENTALS_HZ[class_id],
            n_harmonics: DEFAULT_HARMONICS,
            harmonic_decay: DEFAULT_DECAY,
            am_rate_hz: 10.0 + 5.0 * class_id as f64,
            noise_snr_db: DEFAULT_SNR_DB,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.noise_snr_db = snr_db;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.class_id < N_CLASSES
            && (80.0..=500.0).contains(&self.fundamental_hz)
            && self.n_harmonics >= 3
            && self.harmonic_decay > 0.0
            && self.am_rate_hz >= 0.0
            && !self.noise_snr_db.is_nan();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid synth parameters {self:?}")))
        }
    }
}

/// Class names used for dataset directories.
pub fn class_name(class_id: usize) -> String {
    format!("synth{:03}hz", CLASS_FUNDAMENTALS_HZ[class_id] as usize)
}

fn harmonic_stack(params: &SynthClassParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phases: Vec<f64> = (0..params.n_harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let sr = SAMPLE_RATE as f64;
    (0..STANDARD_LEN)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = (1..=params.n_harmonics)
                .filter(|&k| k as f64 * params.fundamental_hz < nyquist)
                .map(|k| {
                    params.harmonic_decay.powi(k as i32 - 1)
                        * (2.0 * PI * k as f64 * params.fundamental_hz * t + phases[k - 1]).sin()
                })
                .sum();
            tone * (1.0 + AM_DEPTH * (2.0 * PI * params.am_rate_hz * t + am_phase).sin())
        })
        .collect()
}

fn peak_normalize(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in x.iter_mut() {
            *v *= PEAK / peak;
        }
    }
}

/// Noise-free, peak-normalized harmonic signal for `(params, seed)`.
pub fn harmonic_reference(params: &SynthClassParams, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = harmonic_stack(params, &mut rng);
    peak_normalize(&mut x);
    x.into_iter().map(|v| v as f32).collect()
}

/// One 5 s labeled sample; bit-identical for equal `(params, seed)`.
pub fn synth_sample(params: &SynthClassParams, seed: u64) -> StandardWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = harmonic_stack(params, &mut rng);
    if params.noise_snr_db.is_finite() {
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(params.noise_snr_db / 10.0)).sqrt();
        for v in x.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
    }
    peak_normalize(&mut x);
    StandardWaveform::new_unchecked(
        x.into_iter().map(|v| v as f32).collect(),
        Some(params.class_id),
        Provenance::Synthetic { seed },
    )
}

/// Per-sample seed derived from the dataset seed (SplitMix64 finalizer).
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `9 × n_per_class` samples in class-major order.
pub fn synth_dataset(n_per_class: usize, seed: u64) -> Vec<StandardWaveform> {
    synth_dataset_with(n_per_class, seed, DEFAULT_SNR_DB)
}

pub fn synth_dataset_with(n_per_class: usize, seed: u64, snr_db: f64) -> Vec<StandardWaveform> {
    assert!(n_per_class >= 1, "n_per_class must be at least 1");
    (0..N_CLASSES)
        .flat_map(|c| {
            let params = SynthClassParams::for_class(c).with_snr(snr_db);
            (0..n_per_class).map(move |i| {
                let idx = (c * n_per_class + i) as u64;
                synth_sample(&params, derive_seed(seed, idx))
            })
        })
        .collect()
}
