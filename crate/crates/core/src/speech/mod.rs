//! Audio plumbing for the voice path: WAV codec, 16 kHz mono resampling and
//! pluggable speech-to-text / text-to-speech backends.

mod wav;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{PostError, Poster};

pub use wav::{decode_wav, encode_wav};

pub const TARGET_RATE: u32 = 16_000;
pub const MIN_INPUT_RATE: u32 = 8_000;
/// Stub synthesis length per character of text.
pub const STUB_SECONDS_PER_CHAR: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpeechError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("file is truncated")]
    Truncated,
    #[error("sample rate below {MIN_INPUT_RATE} Hz")]
    RateTooLow,
    #[error("audio must be 16 kHz mono")]
    Not16kMono,
    #[error("speech backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no transcript for this audio")]
    NoTranscript,
    #[error("text must be nonempty")]
    EmptyText,
}

impl SpeechError {
    pub fn code(&self) -> &'static str {
        match self {
            SpeechError::NotWav => "NOT_WAV",
            SpeechError::UnsupportedEncoding(_) => "UNSUPPORTED_ENCODING",
            SpeechError::Truncated => "TRUNCATED",
            SpeechError::RateTooLow => "RATE_TOO_LOW",
            SpeechError::Not16kMono => "NOT_16K_MONO",
            SpeechError::BackendUnavailable(_) => "BACKEND_UNAVAILABLE",
            SpeechError::NoTranscript => "NO_TRANSCRIPT",
            SpeechError::EmptyText => "EMPTY_TEXT",
        }
    }
}

impl From<PostError> for SpeechError {
    fn from(e: PostError) -> Self {
        SpeechError::BackendUnavailable(e.to_string())
    }
}

/// Interleaved samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub channels: u16,
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn mono(sample_rate: u32, samples: Vec<f32>) -> Self {
        AudioBuffer {
            sample_rate,
            channels: 1,
            samples,
        }
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn is_16k_mono(&self) -> bool {
        self.sample_rate == TARGET_RATE && self.channels == 1
    }

    /// Channel average per frame.
    pub fn to_mono(&self) -> Vec<f32> {
        match self.channels {
            1 => self.samples.clone(),
            n => self
                .samples
                .chunks_exact(n as usize)
                .map(|frame| {
                    (frame.iter().map(|&s| s as f64).sum::<f64>() / n as f64) as f32
                })
                .collect(),
        }
    }
}

/// Mixes to mono and linearly interpolates to 16 kHz. No anti-alias filter.
pub fn resample_to_16k(buffer: &AudioBuffer) -> Result<AudioBuffer, SpeechError> {
    if buffer.sample_rate < MIN_INPUT_RATE {
        return Err(SpeechError::RateTooLow);
    }
    let mono = buffer.to_mono();
    if buffer.sample_rate == TARGET_RATE {
        return Ok(AudioBuffer::mono(TARGET_RATE, mono));
    }
    let ratio = buffer.sample_rate as f64 / TARGET_RATE as f64;
    // round(n * 16000 / rate) in integers, halves rounding up
    let rate = buffer.sample_rate as u128;
    let out_len = ((mono.len() as u128 * TARGET_RATE as u128 * 2 + rate) / (rate * 2)) as usize;
    let last = mono.len().saturating_sub(1);
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            let (a, b) = (mono[lo] as f64, mono[hi] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect();
    Ok(AudioBuffer::mono(TARGET_RATE, samples))
}

/// Coarse identity of an utterance: sample count plus RMS energy in
/// hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub samples: usize,
    pub energy: u32,
}

impl Fingerprint {
    pub fn of(buffer: &AudioBuffer) -> Self {
        let n = buffer.samples.len();
        let rms = if n == 0 {
            0.0
        } else {
            (buffer.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        Fingerprint {
            samples: n,
            energy: (rms * 100.0).round() as u32,
        }
    }
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, buffer: &AudioBuffer) -> Result<String, SpeechError>;
}

pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<AudioBuffer, SpeechError>;
}

pub fn transcribe(backend: &dyn Transcriber, buffer: &AudioBuffer) -> Result<String, SpeechError> {
    if !buffer.is_16k_mono() {
        return Err(SpeechError::Not16kMono);
    }
    backend.transcribe(buffer)
}

pub fn synthesize(backend: &dyn Synthesizer, text: &str) -> Result<AudioBuffer, SpeechError> {
    if text.trim().is_empty() {
        return Err(SpeechError::EmptyText);
    }
    backend.synthesize(text)
}

/// Fixture-table transcriber keyed by [`Fingerprint`].
#[derive(Debug, Clone, Default)]
pub struct StubTranscriber {
    table: Vec<(Fingerprint, String)>,
}

impl StubTranscriber {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, audio: &AudioBuffer, text: impl Into<String>) -> Self {
        self.insert(Fingerprint::of(audio), text);
        self
    }

    pub fn insert(&mut self, fingerprint: Fingerprint, text: impl Into<String>) {
        self.table.retain(|(f, _)| *f != fingerprint);
        self.table.push((fingerprint, text.into()));
    }
}

impl Transcriber for StubTranscriber {
    fn transcribe(&self, buffer: &AudioBuffer) -> Result<String, SpeechError> {
        if !buffer.is_16k_mono() {
            return Err(SpeechError::Not16kMono);
        }
        let fp = Fingerprint::of(buffer);
        self.table
            .iter()
            .find(|(f, _)| *f == fp)
            .map(|(_, t)| t.clone())
            .ok_or(SpeechError::NoTranscript)
    }
}

/// Placeholder voice: one short tone per character, silence for whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSynthesizer;

impl Synthesizer for StubSynthesizer {
    fn synthesize(&self, text: &str) -> Result<AudioBuffer, SpeechError> {
        if text.trim().is_empty() {
            return Err(SpeechError::EmptyText);
        }
        let per_char = (STUB_SECONDS_PER_CHAR * TARGET_RATE as f64).round() as usize;
        let mut samples = Vec::with_capacity(per_char * text.chars().count());
        for c in text.chars() {
            if c.is_whitespace() {
                samples.extend(std::iter::repeat_n(0.0f32, per_char));
                continue;
            }
            let freq = 300.0 + (c as u32 % 32) as f64 * 20.0;
            samples.extend((0..per_char).map(|i| {
                let t = i as f64 / TARGET_RATE as f64;
                (0.3 * (std::f64::consts::TAU * freq * t).sin()) as f32
            }));
        }
        Ok(AudioBuffer::mono(TARGET_RATE, samples))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextDocument {
    version: u32,
    text: String,
}

/// Speech-to-text server: POST audio/wav, reply `{version: 1, text}`.
pub struct RemoteTranscriber {
    endpoint: String,
    poster: Poster,
}

impl RemoteTranscriber {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteTranscriber {
            endpoint: endpoint.into(),
            poster: Poster::new(timeout),
        }
    }
}

impl Transcriber for RemoteTranscriber {
    fn transcribe(&self, buffer: &AudioBuffer) -> Result<String, SpeechError> {
        if !buffer.is_16k_mono() {
            return Err(SpeechError::Not16kMono);
        }
        let bytes = self
            .poster
            .post(&self.endpoint, "audio/wav", &encode_wav(buffer))?;
        let doc: TextDocument = serde_json::from_slice(&bytes)
            .map_err(|e| SpeechError::BackendUnavailable(format!("bad transcript reply: {e}")))?;
        Ok(doc.text)
    }
}

/// Text-to-speech server: POST `{version: 1, text}`, reply audio/wav.
pub struct RemoteSynthesizer {
    endpoint: String,
    poster: Poster,
}

impl RemoteSynthesizer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteSynthesizer {
            endpoint: endpoint.into(),
            poster: Poster::new(timeout),
        }
    }
}

impl Synthesizer for RemoteSynthesizer {
    fn synthesize(&self, text: &str) -> Result<AudioBuffer, SpeechError> {
        let body = serde_json::to_vec(&TextDocument {
            version: 1,
            text: text.to_string(),
        })
        .expect("text document serializes");
        let bytes = self.poster.post(&self.endpoint, "application/json", &body)?;
        decode_wav(&bytes)
    }
}
