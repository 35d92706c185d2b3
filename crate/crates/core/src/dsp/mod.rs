//! Waveform ingestion and stochastic augmentation.
//!
//! All augmentations are pure functions of `(input, seed, config)` and never
//! change the sample rate or the signal length.

mod augment;
mod biquad;
mod wav;

pub use augment::{
    augment_clip, apply_notches, drop_chunks, mix_noise, noise_gain, AugmentConfig, AugmentOutcome,
    ChunkOutcome, NoiseApplied, NotchOutcome, DEFAULT_NOTCH_Q,
};
pub use biquad::Biquad;
pub use wav::{load_wav, write_wav};

use std::path::PathBuf;

use thiserror::Error;

/// Processing rate the bench expects for all audio.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("audio file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed WAV header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("unsupported WAV codec in {path}: {detail}")]
    UnsupportedCodec { path: PathBuf, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("signal is silent (RMS = 0), SNR undefined")]
    SilentSignal,
    #[error("noise is silent (RMS = 0), SNR undefined")]
    SilentNoise,
    #[error("sample rate mismatch: signal {signal} Hz, noise {noise} Hz")]
    RateMismatch { signal: u32, noise: u32 },
    #[error("noise has {noise} samples at offset {offset}, signal needs {signal}")]
    NoiseTooShort { noise: usize, offset: usize, signal: usize },
    #[error("notch count {count} outside configured range [{low}, {high}]")]
    CountOutOfRange { count: usize, low: usize, high: usize },
    #[error("notch band [{low}, {high}] Hz must lie strictly inside (0, {nyquist}) Hz")]
    NotchBandOutOfRange { low: f64, high: f64, nyquist: f64 },
    #[error("signal of {len} samples is shorter than the required {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("noise bank is empty")]
    EmptyNoiseBank,
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// Mono audio clip with its sample rate.
///
/// Samples are finite and nominally in `[-1, 1]`; values outside that range
/// are allowed (noise mixing does not renormalize).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(DspError::InvalidWaveform("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    /// Sine of the given amplitude, handy for probes and fixtures.
    pub fn sine(freq_hz: f64, amplitude: f64, len: usize, sample_rate: u32) -> Result<Self, DspError> {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
        let samples = (0..len).map(|n| (amplitude * (w * n as f64).sin()) as f32).collect();
        Waveform::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Repeats the waveform until it has at least `len` samples.
    pub fn looped(&self, len: usize) -> Waveform {
        if self.samples.len() >= len {
            return self.clone();
        }
        let samples = self.samples.iter().copied().cycle().take(len).collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> Waveform {
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

/// Root-mean-square amplitude, accumulated in double precision.
pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let power: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (power / samples.len() as f64).sqrt()
}
