use std::f64::consts::TAU;

use proptest::prelude::*;
use taskpilot_core::speech::{decode_wav, encode_wav, resample_to_16k, AudioBuffer, SpeechError};

fn sine(rate: u32, freq: f64, n: usize) -> AudioBuffer {
    AudioBuffer::mono(rate, (0..n).map(|i| (0.8 * (TAU * freq * i as f64 / rate as f64).sin()) as f32).collect())
}

/// Plain O(n*k) DFT magnitude at integer bin k.
fn magnitude(samples: &[f32], k: usize) -> f64 {
    let n = samples.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &s) in samples.iter().enumerate() {
        let phase = TAU * k as f64 * i as f64 / n;
        re += s as f64 * phase.cos();
        im -= s as f64 * phase.sin();
    }
    (re * re + im * im).sqrt()
}

/// Frequency of the largest DFT bin between lo and hi Hz.
fn peak_hz(buffer: &AudioBuffer, lo: f64, hi: f64) -> f64 {
    let n = buffer.samples.len();
    let hz_per_bin = buffer.sample_rate as f64 / n as f64;
    let (klo, khi) = ((lo / hz_per_bin) as usize, (hi / hz_per_bin).ceil() as usize);
    let (best, _) = (klo..=khi)
        .map(|k| (k, magnitude(&buffer.samples, k)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    best as f64 * hz_per_bin
}

fn expected_len(n: usize, rate: u32) -> usize {
    (n as f64 * 16000.0 / rate as f64).round() as usize
}

#[test]
fn sine_48k_keeps_its_pitch() {
    let input = sine(48000, 440.0, 48000);
    let out = resample_to_16k(&input).unwrap();
    assert_eq!(out.sample_rate, 16000);
    assert_eq!(out.channels, 1);
    assert_eq!(out.samples.len(), 16000);
    let peak = peak_hz(&out, 50.0, 2000.0);
    assert!((peak - 440.0).abs() <= 2.0, "peak at {peak} Hz");
}

#[test]
fn sine_44k1_keeps_its_pitch() {
    let input = sine(44100, 440.0, 44100 / 2);
    let out = resample_to_16k(&input).unwrap();
    assert_eq!(out.samples.len(), expected_len(22050, 44100));
    let peak = peak_hz(&out, 50.0, 2000.0);
    assert!((peak - 440.0).abs() <= 2.0, "peak at {peak} Hz");
}

#[test]
fn lengths_follow_round_formula() {
    for (n, rate) in [(48000, 48000), (1, 48000), (2, 48000), (47999, 48000), (44101, 44100), (12345, 22050), (7, 8000), (0, 48000)] {
        let out = resample_to_16k(&AudioBuffer::mono(rate, vec![0.1; n])).unwrap();
        assert_eq!(out.samples.len(), expected_len(n, rate), "n={n} rate={rate}");
    }
}

#[test]
fn dc_is_preserved() {
    for rate in [8000, 22050, 44100, 48000, 96000] {
        let out = resample_to_16k(&AudioBuffer::mono(rate, vec![0.3; rate as usize / 10])).unwrap();
        assert!(out.samples.iter().all(|s| (*s as f64 - 0.3f32 as f64).abs() <= 1e-6));
    }
}

#[test]
fn stereo_averaged_and_rate_floor() {
    let stereo = AudioBuffer { sample_rate: 16000, channels: 2, samples: vec![0.2, 0.4, -0.5, 0.5] };
    let out = resample_to_16k(&stereo).unwrap();
    assert_eq!(out.samples, vec![0.3f32, 0.0]);
    assert_eq!(resample_to_16k(&AudioBuffer::mono(7999, vec![0.0; 10])), Err(SpeechError::RateTooLow));
}

#[test]
fn identity_at_16k() {
    let input = sine(16000, 300.0, 1000);
    assert_eq!(resample_to_16k(&input).unwrap(), input);
}

proptest! {
    #[test]
    fn wav_round_trip_bound(samples in proptest::collection::vec(-1.0f32..=1.0, 0..2000)) {
        let buf = AudioBuffer::mono(16000, samples);
        let back = decode_wav(&encode_wav(&buf)).unwrap();
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            prop_assert!((*a as f64 - *b as f64).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn output_always_16k_mono(rate in 8000u32..96000, n in 0usize..3000) {
        let out = resample_to_16k(&AudioBuffer::mono(rate, vec![0.0; n])).unwrap();
        prop_assert!(out.is_16k_mono());
        prop_assert_eq!(out.samples.len(), expected_len(n, rate));
    }
}
