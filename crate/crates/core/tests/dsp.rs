use std::f32::consts::PI;

use uavlab::dsp::*;

#[test]
fn resampler_preserves_tones() {
    for (sr, freq) in [(44_100u32, 440.0f32), (22_050, 1000.0), (8_000, 300.0), (48_000, 2500.0)] {
        let x: Vec<f32> = (0..sr as usize * 5)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f32 / sr as f32).sin())
            .collect();
        let w = standardize(&RawWaveform::mono(x, sr).unwrap()).unwrap();
        let f = peak_frequency(w.samples(), SAMPLE_RATE);
        assert!((f - freq as f64).abs() <= 0.2 + 1e-9, "{sr} Hz source: {f}");
    }
}

#[test]
fn resampled_lengths() {
    assert_eq!(resampled_len(44_100 * 5, 16_000.0 / 44_100.0), 80_000);
    assert_eq!(resample(&vec![0.1; 48_000], 16_000.0 / 48_000.0).len(), 16_000);
}

#[test]
fn wav_roundtrip_through_dataset_dir() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(2, 3);
    for (i, w) in ds.iter().enumerate() {
        let p = dataset_path(dir.path(), w.label().unwrap(), &format!("{i:04}"));
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        write_wav(&p, w).unwrap();
    }
    let back = read_dataset_dir(dir.path()).unwrap();
    assert_eq!(back.len(), ds.len());
    for ((_, b), a) in back.iter().zip(&ds) {
        assert_eq!(b.label(), a.label());
        let worst = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(worst <= 1.0 / 32768.0 + 1e-7, "{worst}");
    }
}

#[test]
fn synthetic_classes_have_their_fundamentals() {
    let ds = synth_dataset_with(1, 4, f64::INFINITY);
    for (c, w) in ds.iter().enumerate() {
        assert_eq!(w.label(), Some(c));
        let f = peak_frequency(w.samples(), SAMPLE_RATE);
        assert!((f - CLASS_FUNDAMENTALS_HZ[c]).abs() <= 0.2 + 1e-9, "class {c}: {f}");
    }
}

#[test]
fn synthetic_dataset_is_deterministic() {
    assert_eq!(synth_dataset(1, 10), synth_dataset(1, 10));
    assert_ne!(synth_dataset(1, 10)[0], synth_dataset(1, 11)[0]);
}
