//! Waveform augmentations and dataset inflation.
//!
//! Every transform maps a standard 5 s clip to another standard clip. The two
//! distortions rescale their output back to the input's RMS level.

mod vocoder;

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{derive_seed, fit_length, resample, Provenance, StandardWaveform, STANDARD_LEN};
use crate::error::{Error, Result};

pub const NOISE_BOUNDS: (f64, f64) = (0.001, 0.05);
pub const STRETCH_BOUNDS: (f64, f64) = (0.8, 1.25);
pub const PITCH_BOUNDS: (f64, f64) = (-4.0, 4.0);
pub const DRIVE_BOUNDS: (f64, f64) = (1.0, 20.0);
/// Widest shift accepted by [`pitch_shift_unbounded`].
pub const PITCH_FIXTURE_LIMIT: f64 = 24.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    PolarityInversion,
    GaussianNoise,
    TimeStretch,
    PitchShift,
    TanhDistortion,
    SinDistortion,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 6] = [
        AugmentationKind::PolarityInversion,
        AugmentationKind::GaussianNoise,
        AugmentationKind::TimeStretch,
        AugmentationKind::PitchShift,
        AugmentationKind::TanhDistortion,
        AugmentationKind::SinDistortion,
    ];

    /// Legal parameter interval, `None` for parameterless kinds.
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            AugmentationKind::PolarityInversion => None,
            AugmentationKind::GaussianNoise => Some(NOISE_BOUNDS),
            AugmentationKind::TimeStretch => Some(STRETCH_BOUNDS),
            AugmentationKind::PitchShift => Some(PITCH_BOUNDS),
            AugmentationKind::TanhDistortion | AugmentationKind::SinDistortion => Some(DRIVE_BOUNDS),
        }
    }

    /// Sampling range used when a config names only the kind.
    pub fn default_range(self) -> Option<(f64, f64)> {
        match self {
            AugmentationKind::TanhDistortion => Some((1.0, 10.0)),
            AugmentationKind::SinDistortion => Some((1.0, 4.0)),
            other => other.bounds(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::PolarityInversion => "polarity_inversion",
            AugmentationKind::GaussianNoise => "gaussian_noise",
            AugmentationKind::TimeStretch => "time_stretch",
            AugmentationKind::PitchShift => "pitch_shift",
            AugmentationKind::TanhDistortion => "tanh_distortion",
            AugmentationKind::SinDistortion => "sin_distortion",
        }
    }
}

/// One pool entry: a kind and the closed interval its parameter is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, range: Option<(f64, f64)>) -> Result<Self> {
        let spec = Self { kind, range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_range(kind: AugmentationKind) -> Self {
        Self {
            kind,
            range: kind.default_range(),
        }
    }

    pub fn effective_range(&self) -> Option<(f64, f64)> {
        self.range.or_else(|| self.kind.default_range())
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.bounds(), self.range) {
            (None, Some(_)) => Err(Error::Config(format!("{} takes no parameter range", self.kind.name()))),
            (Some((lo, hi)), Some((a, b))) if !(lo <= a && a <= b && b <= hi) => Err(Error::Config(format!(
                "{} range [{a}, {b}] outside [{lo}, {hi}] or reversed",
                self.kind.name()
            ))),
            _ => Ok(()),
        }
    }

    /// Draws a parameter and applies the transform.
    pub fn apply(&self, w: &StandardWaveform, rng: &mut impl Rng) -> Result<(Vec<f32>, AppliedAugmentation)> {
        let param = self.effective_range().map(|(a, b)| if a == b { a } else { rng.gen_range(a..=b) });
        let out = apply_kind(self.kind, w.samples(), param, rng)?;
        Ok((out, AppliedAugmentation { kind: self.kind, param }))
    }
}

/// Record of one applied transform, stored in the output's provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedAugmentation {
    pub kind: AugmentationKind,
    pub param: Option<f64>,
}

fn check_range(kind: AugmentationKind, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&value) {
        return Err(Error::Config(format!("{} parameter {value} outside [{lo}, {hi}]", kind.name())));
    }
    Ok(())
}

fn apply_kind(kind: AugmentationKind, x: &[f32], param: Option<f64>, rng: &mut impl Rng) -> Result<Vec<f32>> {
    let p = || param.ok_or_else(|| Error::Config(format!("{} needs a parameter", kind.name())));
    Ok(match kind {
        AugmentationKind::PolarityInversion => x.iter().map(|v| -v).collect(),
        AugmentationKind::GaussianNoise => {
            let amp = p()?;
            check_range(kind, amp, NOISE_BOUNDS)?;
            add_noise(x, amp, rng)
        }
        AugmentationKind::TimeStretch => {
            let rate = p()?;
            check_range(kind, rate, STRETCH_BOUNDS)?;
            fit_length(vocoder::stretch(x, rate)?, x.len())
        }
        AugmentationKind::PitchShift => {
            let s = p()?;
            check_range(kind, s, PITCH_BOUNDS)?;
            shift(x, s)?
        }
        AugmentationKind::TanhDistortion | AugmentationKind::SinDistortion => distort(kind, x, p()?)?,
    })
}

fn distort(kind: AugmentationKind, x: &[f32], drive: f64) -> Result<Vec<f32>> {
    check_range(kind, drive, DRIVE_BOUNDS)?;
    let y = match kind {
        AugmentationKind::TanhDistortion => x.iter().map(|&v| (drive * v as f64).tanh()).collect(),
        _ => x.iter().map(|&v| (FRAC_PI_2 * drive * v as f64).sin()).collect(),
    };
    Ok(renormalize(x, y))
}

fn add_noise(x: &[f32], amp: f64, rng: &mut impl Rng) -> Vec<f32> {
    x.iter()
        .map(|&v| {
            let g: f64 = rng.sample(StandardNormal);
            (v as f64 + amp * g) as f32
        })
        .collect()
}

fn shift(x: &[f32], semitones: f64) -> Result<Vec<f32>> {
    if semitones == 0.0 {
        return Ok(x.to_vec());
    }
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = vocoder::stretch(x, rate)?;
    Ok(fit_length(resample(&stretched, rate), x.len()))
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn renormalize(x: &[f32], y: Vec<f64>) -> Vec<f32> {
    let target = rms(x);
    let current = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
    let g = if target > 0.0 && current > 0.0 { target / current } else { 0.0 };
    y.into_iter().map(|v| (v * g) as f32).collect()
}

fn derived(w: &StandardWaveform, samples: Vec<f32>, applied: AppliedAugmentation) -> StandardWaveform {
    let mut history = match w.provenance() {
        Provenance::Augmented { applied } => applied.clone(),
        _ => Vec::new(),
    };
    history.push(applied);
    w.derive(samples, Provenance::Augmented { applied: history })
}

fn single(w: &StandardWaveform, kind: AugmentationKind, param: Option<f64>, samples: Vec<f32>) -> StandardWaveform {
    debug_assert_eq!(samples.len(), STANDARD_LEN);
    derived(w, samples, AppliedAugmentation { kind, param })
}

/// `y[n] = −x[n]`.
pub fn polarity_inversion(w: &StandardWaveform) -> StandardWaveform {
    let y = w.samples().iter().map(|v| -v).collect();
    single(w, AugmentationKind::PolarityInversion, None, y)
}

/// Adds `amplitude · N(0, 1)` noise; `amplitude` must lie in [0.001, 0.05].
pub fn gaussian_noise(w: &StandardWaveform, amplitude: f64, rng: &mut impl Rng) -> Result<StandardWaveform> {
    check_range(AugmentationKind::GaussianNoise, amplitude, NOISE_BOUNDS)?;
    let y = add_noise(w.samples(), amplitude, rng);
    Ok(single(w, AugmentationKind::GaussianNoise, Some(amplitude), y))
}

/// Pitch-preserving stretch by `rate` in [0.8, 1.25], then pad or clip back to 5 s.
pub fn time_stretch(w: &StandardWaveform, rate: f64) -> Result<StandardWaveform> {
    check_range(AugmentationKind::TimeStretch, rate, STRETCH_BOUNDS)?;
    let y = fit_length(vocoder::stretch(w.samples(), rate)?, STANDARD_LEN);
    Ok(single(w, AugmentationKind::TimeStretch, Some(rate), y))
}

/// Shift by `semitones` in [−4, 4] without changing duration.
pub fn pitch_shift(w: &StandardWaveform, semitones: f64) -> Result<StandardWaveform> {
    check_range(AugmentationKind::PitchShift, semitones, PITCH_BOUNDS)?;
    pitch_shift_unbounded(w, semitones)
}

/// [`pitch_shift`] for shifts up to ±[`PITCH_FIXTURE_LIMIT`], used by octave fixtures.
pub fn pitch_shift_unbounded(w: &StandardWaveform, semitones: f64) -> Result<StandardWaveform> {
    check_range(
        AugmentationKind::PitchShift,
        semitones,
        (-PITCH_FIXTURE_LIMIT, PITCH_FIXTURE_LIMIT),
    )?;
    let y = shift(w.samples(), semitones)?;
    Ok(single(w, AugmentationKind::PitchShift, Some(semitones), y))
}

/// `tanh(drive · x)` rescaled to the input RMS; `drive` in [1, 20].
pub fn tanh_distortion(w: &StandardWaveform, drive: f64) -> Result<StandardWaveform> {
    let y = distort(AugmentationKind::TanhDistortion, w.samples(), drive)?;
    Ok(single(w, AugmentationKind::TanhDistortion, Some(drive), y))
}

/// `sin(π/2 · drive · x)` rescaled to the input RMS; `drive` in [1, 20].
pub fn sin_distortion(w: &StandardWaveform, drive: f64) -> Result<StandardWaveform> {
    let y = distort(AugmentationKind::SinDistortion, w.samples(), drive)?;
    Ok(single(w, AugmentationKind::SinDistortion, Some(drive), y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub k_per_sample: usize,
    pub pool: Vec<AugmentationSpec>,
    #[serde(default = "default_keep_original")]
    pub keep_original: bool,
}

fn default_keep_original() -> bool {
    true
}

impl InflationConfig {
    pub fn new(k_per_sample: usize, pool: Vec<AugmentationSpec>) -> Self {
        Self {
            k_per_sample,
            pool,
            keep_original: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_per_sample > 0 && self.pool.is_empty() {
            return Err(Error::Config("augmentation pool is empty but copies were requested".into()));
        }
        self.pool.iter().try_for_each(AugmentationSpec::validate)
    }

    /// Samples emitted per input sample.
    pub fn multiplier(&self) -> usize {
        self.k_per_sample + usize::from(self.keep_original)
    }
}

/// One augmented copy: every pool entry applied in order with fresh parameters.
pub fn augment_copy(w: &StandardWaveform, pool: &[AugmentationSpec], rng: &mut impl Rng) -> Result<StandardWaveform> {
    let mut cur = w.clone();
    for spec in pool {
        let (y, applied) = spec.apply(&cur, rng)?;
        cur = derived(&cur, y, applied);
    }
    Ok(cur)
}

/// Lazily inflated dataset: each sample's original (when kept) then its copies.
///
/// Sample `i` draws from its own stream seeded by `derive_seed(seed, i)`, so the
/// result does not depend on evaluation order.
pub fn inflate_iter<'a>(
    dataset: &'a [StandardWaveform],
    cfg: &'a InflationConfig,
    seed: u64,
) -> Result<impl Iterator<Item = Result<StandardWaveform>> + 'a> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot inflate an empty dataset".into()));
    }
    cfg.validate()?;
    Ok(dataset.iter().enumerate().flat_map(move |(i, w)| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let original = cfg.keep_original.then(|| Ok(w.clone()));
        let copies = (0..cfg.k_per_sample).map(move |_| augment_copy(w, &cfg.pool, &mut rng));
        original.into_iter().chain(copies)
    }))
}

pub fn inflate(dataset: &[StandardWaveform], cfg: &InflationConfig, seed: u64) -> Result<Vec<StandardWaveform>> {
    inflate_iter(dataset, cfg, seed)?.collect()
}
