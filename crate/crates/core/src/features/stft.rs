use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: Window,
    /// Reflect-pad `n_fft / 2` on both ends so frame `t` is centered on sample `t·hop`.
    /// Otherwise frame `t` covers `win_length` samples from `t·hop`, zero-filled up to `n_fft`.
    pub center: bool,
}

impl StftConfig {
    pub fn hann(n_fft: usize, hop_length: usize) -> Self {
        Self {
            n_fft,
            win_length: n_fft,
            hop_length,
            window: Window::Hann,
            center: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.win_length == 0 || self.win_length > self.n_fft || self.hop_length == 0 {
            return Err(Error::Config(format!("invalid STFT configuration {self:?}")));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `n` samples.
    pub fn n_frames(&self, n: usize) -> usize {
        if self.center {
            1 + n / self.hop_length
        } else if n < self.win_length {
            0
        } else {
            1 + (n - self.win_length) / self.hop_length
        }
    }

    /// Window of length `n_fft`: `win_length` taps, centered when `center` is set, leading otherwise.
    pub fn window(&self) -> Vec<f64> {
        let taps: Vec<f64> = match self.window {
            Window::Hann => (0..self.win_length)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win_length as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; self.win_length],
        };
        let mut w = vec![0.0; self.n_fft];
        let off = if self.center { (self.n_fft - self.win_length) / 2 } else { 0 };
        w[off..off + self.win_length].copy_from_slice(&taps);
        w
    }
}

/// One-sided complex spectrogram, frame-major.
#[derive(Clone, Debug)]
pub struct ComplexGrid {
    pub n_bins: usize,
    pub n_frames: usize,
    pub(crate) data: Vec<Complex<f64>>,
}

impl ComplexGrid {
    pub fn new(n_bins: usize, n_frames: usize) -> Self {
        Self {
            n_bins,
            n_frames,
            data: vec![Complex::new(0.0, 0.0); n_bins * n_frames],
        }
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex<f64> {
        self.data[frame * self.n_bins + bin]
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: Complex<f64>) {
        self.data[frame * self.n_bins + bin] = v;
    }

    pub fn frame(&self, frame: usize) -> &[Complex<f64>] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    /// `|X|²` as a `[n_bins × n_frames]` row-major grid.
    pub fn power(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for f in 0..self.n_frames {
            for b in 0..self.n_bins {
                out[b * self.n_frames + f] = self.get(b, f).norm_sqr();
            }
        }
        out
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            if n == 1 {
                return x[0];
            }
            let period = 2 * (n - 1);
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            x[j as usize]
        })
        .collect()
}

pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<ComplexGrid> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput("stft of an empty signal".into()));
    }
    let padded;
    let signal: &[f64] = if cfg.center {
        padded = reflect_pad(x, cfg.n_fft / 2);
        &padded
    } else {
        x
    };
    let n_frames = cfg.n_frames(x.len());
    let window = cfg.window();
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut grid = ComplexGrid::new(cfg.n_bins(), n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = signal.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        grid.data[t * grid.n_bins..(t + 1) * grid.n_bins].copy_from_slice(&buf[..grid.n_bins]);
    }
    Ok(grid)
}

/// Weighted overlap-add inverse, normalized by the summed squared window.
pub fn istft(grid: &ComplexGrid, cfg: &StftConfig, length: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if grid.n_bins != cfg.n_bins() {
        return Err(Error::Config(format!(
            "grid has {} bins, configuration expects {}",
            grid.n_bins,
            cfg.n_bins()
        )));
    }
    let window = cfg.window();
    let ifft = FftPlanner::new().plan_fft_inverse(cfg.n_fft);
    let total = cfg.n_fft + cfg.hop_length * grid.n_frames.saturating_sub(1);
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let n = cfg.n_fft;
    for t in 0..grid.n_frames {
        let frame = grid.frame(t);
        for k in 0..n {
            buf[k] = if k < grid.n_bins {
                frame[k]
            } else {
                frame[n - k].conj()
            };
        }
        buf[0].im = 0.0;
        if n.is_multiple_of(2) {
            buf[n / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_length;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        if w > 1e-10 {
            *o /= w;
        }
    }
    let offset = if cfg.center { cfg.n_fft / 2 } else { 0 };
    let mut y: Vec<f64> = out.into_iter().skip(offset).take(length).collect();
    y.resize(length, 0.0);
    Ok(y)
}
