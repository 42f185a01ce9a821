use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{RawWaveform, StandardWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports a short sample read as a custom `Other` error.
        hound::Error::IoError(e)
            if e.kind() == ErrorKind::UnexpectedEof || e.to_string().contains("enough bytes") =>
        {
            Error::Format(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(m) => Error::Format(format!("{}: {m}", path.display())),
        hound::Error::Unsupported => Error::Unsupported(format!("{}: codec", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads PCM 16/24/32-bit or float32 WAV into `[-1, 1]` samples per channel.
pub fn load_wav(path: impl AsRef<Path>) -> Result<RawWaveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    let declared = reader.len() as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    if interleaved.len() != declared || !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::Format(format!(
            "{}: expected {declared} samples, read {}",
            path.display(),
            interleaved.len()
        )));
    }
    let frames = interleaved.len() / n_ch;
    let channels = (0..n_ch)
        .map(|c| (0..frames).map(|f| interleaved[f * n_ch + c]).collect())
        .collect();
    RawWaveform::new(channels, spec.sample_rate)
}

fn to_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a 16-bit PCM file.
pub fn write_wav_raw(path: impl AsRef<Path>, wave: &RawWaveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: wave.channels().len() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for f in 0..wave.len() {
        for ch in wave.channels() {
            w.write_sample(to_pcm16(ch[f])).map_err(|e| map_hound(path, e))?;
        }
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

/// Writes a standardized waveform as mono 16 kHz PCM16.
pub fn write_wav(path: impl AsRef<Path>, wave: &StandardWaveform) -> Result<()> {
    let raw = RawWaveform::new(vec![wave.samples().to_vec()], SAMPLE_RATE)?;
    write_wav_raw(path, &raw)
}
