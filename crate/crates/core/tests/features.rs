use std::f32::consts::PI;

use uavlab::dsp::{synth_dataset, Provenance, StandardWaveform, STANDARD_LEN};
use uavlab::features::*;

fn wave(samples: Vec<f32>) -> StandardWaveform {
    StandardWaveform::new(samples, None, Provenance::Original).unwrap()
}

fn tone(freq: f32) -> StandardWaveform {
    wave((0..STANDARD_LEN).map(|i| 0.5 * (2.0 * PI * freq * i as f32 / 16_000.0).sin()).collect())
}

#[test]
fn cnn_shape_and_flatten_size() {
    let f = melspec_cnn(&synth_dataset(1, 1)[0]);
    assert_eq!(f.shape(), (128, 157));
    let (mut h, mut w) = f.shape();
    for _ in 0..3 {
        h /= 2;
        w /= 2;
    }
    assert_eq!((h, w), (16, 19));
    assert_eq!(64 * h * w, 19_456);
}

#[test]
fn cnn_zero_input_hits_the_floor() {
    let f = melspec_cnn(&wave(vec![0.0; STANDARD_LEN]));
    let floor = (1e-10f64).ln() as f32;
    assert!(f.values.iter().all(|&v| v == floor));
    assert_eq!(f.scale, FeatureScale::LogMel);
}

#[test]
fn cnn_tone_lands_in_its_band() {
    let f = melspec_cnn(&tone(440.0));
    let avg = f.time_average();
    let best = (0..avg.len()).max_by(|&a, &b| avg[a].total_cmp(&avg[b])).unwrap();
    let (lo, hi) = cnn_filterbank().edges_hz[best];
    assert!(lo <= 440.0 && 440.0 <= hi, "row {best} spans [{lo}, {hi}]");
}

#[test]
fn cnn_is_covariant_to_hop_delays() {
    let x = synth_dataset(1, 4)[3].samples().to_vec();
    let mut delayed = vec![0.0; CNN_HOP];
    delayed.extend_from_slice(&x[..STANDARD_LEN - CNN_HOP]);
    let a = melspec_cnn(&wave(x));
    let b = melspec_cnn(&wave(delayed));
    for t in 2..CNN_FRAMES - 2 {
        for m in 0..N_MELS {
            let (u, v) = (a.get(m, t - 1), b.get(m, t));
            assert!((u - v).abs() <= 1e-4, "mel {m} frame {t}: {u} vs {v}");
        }
    }
}

#[test]
fn features_are_finite() {
    for w in synth_dataset(1, 9).iter().take(3) {
        assert!(melspec_cnn(w).values.iter().all(|v| v.is_finite()));
        assert!(melspec_ast(w).values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ast_shape_and_padding() {
    assert_eq!(ast_frame_count(STANDARD_LEN), 498);
    let f = melspec_ast(&synth_dataset(1, 2)[5]);
    assert_eq!(f.shape(), (128, 1024));
    assert_eq!(f.scale, FeatureScale::NormalizedLogMel);
    let pad = ((0.0 - AST_MEAN) / (2.0 * AST_STD)) as f32;
    for m in 0..N_MELS {
        for t in 498..1024 {
            assert_eq!(f.get(m, t), pad);
        }
    }
    assert!((pad - 0.467_03).abs() < 1e-4);
}

#[test]
fn ast_truncated_variant_keeps_the_head() {
    let w = &synth_dataset(1, 2)[1];
    let full = melspec_ast(w);
    let short = melspec_ast_frames(w, 128);
    assert_eq!(short.shape(), (128, 128));
    for m in 0..N_MELS {
        for t in 0..128 {
            assert_eq!(short.get(m, t), full.get(m, t));
        }
    }
}

#[test]
fn ast_normalization_is_sane() {
    let ds = synth_dataset(2, 3);
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in &ds {
        let f = melspec_ast(w);
        sum += f.values.iter().map(|&v| v as f64).sum::<f64>();
        n += f.values.len();
    }
    let mean = sum / n as f64;
    assert!(mean.abs() <= 3.0, "{mean}");
}

#[test]
fn front_end_dispatch() {
    let w = &synth_dataset(1, 2)[0];
    assert_eq!(FrontEnd::Cnn.extract(w).shape(), FrontEnd::Cnn.shape());
    let ast = FrontEnd::Ast { frames: 256 };
    assert_eq!(ast.extract(w).shape(), (128, 256));
}

#[test]
fn feature_map_validates() {
    assert!(FeatureMap::new(2, 3, vec![0.0; 5], FeatureScale::LogMel).is_err());
    assert!(FeatureMap::new(1, 2, vec![0.0, f32::NAN], FeatureScale::LogMel).is_err());
    assert!(FeatureMap::new(1, 2, vec![0.0, 1.0], FeatureScale::LogMel).is_ok());
}
