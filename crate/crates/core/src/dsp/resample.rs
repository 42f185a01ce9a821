//! Band-limited resampling with a Kaiser-windowed sinc interpolation table.

use std::f64::consts::PI;
use std::sync::OnceLock;

const ZERO_CROSSINGS: usize = 64;
const TABLE_PRECISION: usize = 512;
const KAISER_BETA: f64 = 8.6;
const ROLLOFF: f64 = 0.945;

/// Modified Bessel function of the first kind, order zero.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// One wing of the windowed sinc, sampled `TABLE_PRECISION` times per zero crossing.
fn table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * TABLE_PRECISION;
        let i0b = bessel_i0(KAISER_BETA);
        (0..=n)
            .map(|i| {
                let t = i as f64 / TABLE_PRECISION as f64;
                let x = ROLLOFF * t;
                let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let r = i as f64 / n as f64;
                let taper = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                ROLLOFF * sinc * taper
            })
            .collect()
    })
}

/// Output length for a conversion `from → to` of `n` input samples.
pub fn resampled_len(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio).ceil() as usize
}

/// Resamples by `ratio = out_rate / in_rate`. Identity when the ratio is exactly 1.
pub fn resample(x: &[f32], ratio: f64) -> Vec<f32> {
    assert!(ratio > 0.0 && ratio.is_finite(), "resampling ratio must be positive");
    if ratio == 1.0 {
        return x.to_vec();
    }
    let win = table();
    let scale = ratio.min(1.0);
    let gain = scale;
    let step = 1.0 / ratio;
    let index_step = scale * TABLE_PRECISION as f64;
    let nwin = win.len() as f64;
    let weight = |pos: f64| -> f64 {
        let i = pos as usize;
        let eta = pos - i as f64;
        let next = if i + 1 < win.len() { win[i + 1] } else { 0.0 };
        win[i] + eta * (next - win[i])
    };
    let n_out = resampled_len(x.len(), ratio);
    let mut out = Vec::with_capacity(n_out);
    for t in 0..n_out {
        let time = t as f64 * step;
        let n = time.floor() as usize;
        let frac = scale * (time - n as f64);
        let mut acc = 0.0;
        // left wing, including the sample at n
        let mut pos = frac * TABLE_PRECISION as f64;
        let mut i = 0;
        while pos < nwin - 1.0 && i <= n {
            if let Some(&s) = x.get(n - i) {
                acc += weight(pos) * s as f64;
            }
            pos += index_step;
            i += 1;
        }
        // right wing
        let mut pos = (scale - frac) * TABLE_PRECISION as f64;
        let mut k = n + 1;
        while pos < nwin - 1.0 && k < x.len() {
            acc += weight(pos) * x[k] as f64;
            pos += index_step;
            k += 1;
        }
        out.push((acc * gain) as f32);
    }
    out
}
