use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use crate::error::Result;
use crate::features::{istft, stft, ComplexGrid, StftConfig};

pub(crate) const N_FFT: usize = 2048;
pub(crate) const HOP: usize = 512;

fn wrap(phase: f64) -> f64 {
    phase - 2.0 * PI * (phase / (2.0 * PI)).round()
}

/// Phase-vocoder stretch; output has `round(len / rate)` samples. `rate > 1` shortens.
pub(crate) fn stretch(x: &[f32], rate: f64) -> Result<Vec<f32>> {
    let cfg = StftConfig::hann(N_FFT, HOP);
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let spec = stft(&xs, &cfg)?;
    let (bins, frames) = (spec.n_bins, spec.n_frames);
    let steps: Vec<f64> = (0..).map(|i| i as f64 * rate).take_while(|&s| s < frames as f64).collect();
    let advance: Vec<f64> = (0..bins).map(|k| 2.0 * PI * HOP as f64 * k as f64 / N_FFT as f64).collect();
    let mag: Vec<f64> = spec.data.iter().map(|c| c.norm()).collect();
    let arg: Vec<f64> = spec.data.iter().map(|c| c.arg()).collect();
    let at = |v: &[f64], t: usize, k: usize| if t < frames { v[t * bins + k] } else { 0.0 };

    let mut out = ComplexGrid::new(bins, steps.len());
    let mut phase: Vec<f64> = arg[..bins].to_vec();
    for (t, &step) in steps.iter().enumerate() {
        let i = step as usize;
        let alpha = step - i as f64;
        for k in 0..bins {
            let m = (1.0 - alpha) * at(&mag, i, k) + alpha * at(&mag, i + 1, k);
            out.set(k, t, Complex::from_polar(m, phase[k]));
            let dphase = wrap(at(&arg, i + 1, k) - at(&arg, i, k) - advance[k]);
            phase[k] += advance[k] + dphase;
        }
    }
    let len = (x.len() as f64 / rate).round() as usize;
    Ok(istft(&out, &cfg, len)?.into_iter().map(|v| v as f32).collect())
}
