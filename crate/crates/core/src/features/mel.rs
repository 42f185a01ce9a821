use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters as a row-major `[n_mels × (n_fft/2 + 1)]` matrix.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    /// Lower and upper edge of each filter in Hz.
    pub edges_hz: Vec<(f64, f64)>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `mel = W · power` for a `[n_bins × n_frames]` power grid.
    pub fn apply(&self, power: &[f64], n_frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_mels * n_frames];
        for m in 0..self.n_mels {
            let row = self.row(m);
            let dst = &mut out[m * n_frames..(m + 1) * n_frames];
            for (b, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &power[b * n_frames..(b + 1) * n_frames];
                for (d, &p) in dst.iter_mut().zip(src) {
                    *d += w * p;
                }
            }
        }
        out
    }
}

pub fn mel_filterbank(n_mels: usize, n_fft: usize, sr: u32, fmin: f64, fmax: f64) -> Result<MelFilterbank> {
    let nyquist = sr as f64 / 2.0;
    if fmax > nyquist || fmin < 0.0 || fmin >= fmax || n_mels == 0 || n_fft == 0 {
        return Err(Error::Config(format!(
            "mel filterbank needs 0 ≤ fmin < fmax ≤ {nyquist} Hz, got [{fmin}, {fmax}]"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr as f64 / n_fft as f64).collect();
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        for (k, &f) in bin_hz.iter().enumerate() {
            let up = (f - l) / (c - l);
            let down = (r - f) / (r - c);
            weights[m * n_bins + k] = up.min(down).max(0.0);
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        centers_hz: points[1..=n_mels].to_vec(),
        edges_hz: (0..n_mels).map(|m| (points[m], points[m + 2])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_1000_hz() {
        let expected = 2595.0 * (1.0f64 + 1000.0 / 700.0).log10();
        assert!((hz_to_mel(1000.0) - expected).abs() < 1e-12);
        assert!((hz_to_mel(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn rows_are_nonnegative_contiguous_and_nonempty() {
        let fb = mel_filterbank(128, 1024, 16_000, 0.0, 8000.0).unwrap();
        assert_eq!((fb.n_mels, fb.n_bins), (128, 513));
        for m in 0..128 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0, "row {m} empty");
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "row {m} support has gaps");
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        assert!(matches!(mel_filterbank(128, 1024, 16_000, 0.0, 9000.0), Err(Error::Config(_))));
    }
}
