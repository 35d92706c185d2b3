use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rms, Biquad, DspError, Waveform};
use crate::Seed;

/// Quality factor of every notch section.
pub const DEFAULT_NOTCH_Q: f64 = 30.0;

/// Minimum signal length accepted by [`apply_notches`].
const MIN_NOTCH_LEN: usize = 64;

/// Ranges and probabilities for the three waveform augmentations.
///
/// Integer ranges are inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub snr_db_range: [f64; 2],
    pub notch_count_range: [usize; 2],
    /// Band (Hz) the notch centers are drawn from.
    pub notch_band: [f64; 2],
    pub notch_q: f64,
    pub chunk_count_range: [usize; 2],
    /// Chunk lengths in samples at the clip's native rate.
    pub chunk_len_range: [usize; 2],
    pub per_augmentation_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            snr_db_range: [0.0, 15.0],
            notch_count_range: [2, 5],
            // 0.95 * Nyquist at 16 kHz
            notch_band: [100.0, 7600.0],
            notch_q: DEFAULT_NOTCH_Q,
            chunk_count_range: [1, 5],
            chunk_len_range: [1000, 2000],
            per_augmentation_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: &str| Err(DspError::InvalidConfig(msg.to_string()));
        let [snr_lo, snr_hi] = self.snr_db_range;
        if !(snr_lo.is_finite() && snr_hi.is_finite() && snr_lo <= snr_hi) {
            return bad("snr_db_range must be finite with low <= high");
        }
        if self.notch_count_range[0] > self.notch_count_range[1] {
            return bad("notch_count_range must have low <= high");
        }
        let [f_lo, f_hi] = self.notch_band;
        if !(f_lo > 0.0 && f_lo <= f_hi && f_hi.is_finite()) {
            return bad("notch_band must satisfy 0 < low <= high");
        }
        if !(self.notch_q.is_finite() && self.notch_q > 0.0) {
            return bad("notch_q must be positive");
        }
        let [c_lo, c_hi] = self.chunk_count_range;
        if c_lo == 0 || c_lo > c_hi {
            return bad("chunk_count_range must satisfy 1 <= low <= high");
        }
        let [l_lo, l_hi] = self.chunk_len_range;
        if l_lo == 0 || l_lo > l_hi {
            return bad("chunk_len_range must satisfy 1 <= low <= high");
        }
        if !(0.0..=1.0).contains(&self.per_augmentation_probability) {
            return bad("per_augmentation_probability must be in [0, 1]");
        }
        Ok(())
    }

    fn check_band(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = f64::from(sample_rate) / 2.0;
        let [low, high] = self.notch_band;
        if !(low > 0.0 && high < nyquist && low <= high) {
            return Err(DspError::NotchBandOutOfRange { low, high, nyquist });
        }
        Ok(())
    }
}

/// Gain applied to the noise so that the mix reaches `snr_db`.
pub fn noise_gain(signal_rms: f64, noise_rms: f64, snr_db: f64) -> f64 {
    (signal_rms / noise_rms) * 10f64.powf(-snr_db / 20.0)
}

/// Adds `noise[offset..offset + signal.len()]` to `signal` at the requested
/// RMS signal-to-noise ratio. The result is not clipped or renormalized.
pub fn mix_noise(signal: &Waveform, noise: &Waveform, snr_db: f64, offset: usize) -> Result<Waveform, DspError> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(DspError::RateMismatch { signal: signal.sample_rate(), noise: noise.sample_rate() });
    }
    let n = signal.len();
    if offset.checked_add(n).is_none_or(|end| end > noise.len()) {
        return Err(DspError::NoiseTooShort { noise: noise.len(), offset, signal: n });
    }
    let crop = &noise.samples()[offset..offset + n];
    let signal_rms = signal.rms();
    if signal_rms == 0.0 {
        return Err(DspError::SilentSignal);
    }
    let noise_rms = rms(crop);
    if noise_rms == 0.0 {
        return Err(DspError::SilentNoise);
    }
    let gain = noise_gain(signal_rms, noise_rms, snr_db);
    let mixed = signal
        .samples()
        .iter()
        .zip(crop)
        .map(|(&s, &z)| (f64::from(s) + gain * f64::from(z)) as f32)
        .collect();
    Ok(signal.with_samples(mixed))
}

/// Result of [`apply_notches`]: the filtered clip and the drawn centers (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct NotchOutcome {
    pub waveform: Waveform,
    pub centers: Vec<f64>,
}

/// Applies `count` biquad notches at centers drawn uniformly from the
/// configured band.
pub fn apply_notches(signal: &Waveform, count: usize, seed: Seed, config: &AugmentConfig) -> Result<NotchOutcome, DspError> {
    let [low, high] = config.notch_count_range;
    if !(low..=high).contains(&count) {
        return Err(DspError::CountOutOfRange { count, low, high });
    }
    config.check_band(signal.sample_rate())?;
    if signal.len() < MIN_NOTCH_LEN {
        return Err(DspError::SignalTooShort { len: signal.len(), min: MIN_NOTCH_LEN });
    }
    let mut rng = seed.rng();
    let [f_lo, f_hi] = config.notch_band;
    let centers: Vec<f64> = (0..count).map(|_| rng.random_range(f_lo..=f_hi)).collect();
    let rate = f64::from(signal.sample_rate());
    let mut samples = signal.samples().to_vec();
    for &center in &centers {
        Biquad::notch(center, rate, config.notch_q).process(&mut samples);
    }
    Ok(NotchOutcome { waveform: signal.with_samples(samples), centers })
}

/// Result of [`drop_chunks`]: the clip and the zeroed spans, sorted and disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutcome {
    pub waveform: Waveform,
    pub spans: Vec<Range<usize>>,
}

/// Zeroes between `chunk_count_range` non-overlapping spans whose lengths lie
/// in `chunk_len_range`. Length is preserved.
pub fn drop_chunks(signal: &Waveform, seed: Seed, config: &AugmentConfig) -> Result<ChunkOutcome, DspError> {
    let [n_lo, n_hi] = config.chunk_count_range;
    let [l_lo, l_hi] = config.chunk_len_range;
    let len = signal.len();
    if len < l_lo {
        return Err(DspError::SignalTooShort { len, min: l_lo });
    }
    let mut rng = seed.rng();
    let n = rng.random_range(n_lo..=n_hi);
    let mut lengths: Vec<usize> = (0..n).map(|_| rng.random_range(l_lo..=l_hi).min(len)).collect();
    // Short clips cannot hold every drawn chunk; keep as many as fit.
    while lengths.len() > 1 && lengths.iter().sum::<usize>() > len {
        lengths.pop();
    }
    let free = len - lengths.iter().sum::<usize>();
    let mut offsets: Vec<usize> = (0..lengths.len()).map(|_| rng.random_range(0..=free)).collect();
    offsets.sort_unstable();

    let mut spans = Vec::with_capacity(lengths.len());
    let mut consumed = 0;
    for (offset, chunk) in offsets.into_iter().zip(&lengths) {
        let start = offset + consumed;
        spans.push(start..start + chunk);
        consumed += chunk;
    }
    let mut samples = signal.samples().to_vec();
    for span in &spans {
        samples[span.clone()].fill(0.0);
    }
    Ok(ChunkOutcome { waveform: signal.with_samples(samples), spans })
}

/// Parameters of a noise mix applied by [`augment_clip`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseApplied {
    pub bank_index: usize,
    pub snr_db: f64,
    pub offset: usize,
    pub gain: f64,
}

/// Augmented clip plus a record of which augmentations fired.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub waveform: Waveform,
    pub noise: Option<NoiseApplied>,
    pub notch_centers: Option<Vec<f64>>,
    pub chunk_spans: Option<Vec<Range<usize>>>,
}

/// Applies noise, notches and chunk dropping, each independently with
/// `per_augmentation_probability`, in that order.
///
/// Noise entries shorter than the clip are looped.
pub fn augment_clip(
    signal: &Waveform,
    noise_bank: &[Waveform],
    seed: Seed,
    config: &AugmentConfig,
) -> Result<AugmentOutcome, DspError> {
    config.validate()?;
    let p = config.per_augmentation_probability;
    let mut rng = seed.rng();
    let use_noise = rng.random_bool(p);
    let use_notch = rng.random_bool(p);
    let use_chunks = rng.random_bool(p);

    let mut current = signal.clone();
    let mut outcome = AugmentOutcome { waveform: signal.clone(), noise: None, notch_centers: None, chunk_spans: None };

    if use_noise {
        if noise_bank.is_empty() {
            return Err(DspError::EmptyNoiseBank);
        }
        let mut noise_rng = seed.derive("noise").rng();
        let bank_index = noise_rng.random_range(0..noise_bank.len());
        let noise = noise_bank[bank_index].looped(current.len());
        let [lo, hi] = config.snr_db_range;
        let snr_db = noise_rng.random_range(lo..=hi);
        let offset = noise_rng.random_range(0..=noise.len() - current.len());
        let gain = noise_gain(current.rms(), rms(&noise.samples()[offset..offset + current.len()]), snr_db);
        current = mix_noise(&current, &noise, snr_db, offset)?;
        outcome.noise = Some(NoiseApplied { bank_index, snr_db, offset, gain });
    }
    if use_notch {
        let mut notch_rng = seed.derive("notch-count").rng();
        let [lo, hi] = config.notch_count_range;
        let count = notch_rng.random_range(lo..=hi);
        let notched = apply_notches(&current, count, seed.derive("notch"), config)?;
        current = notched.waveform;
        outcome.notch_centers = Some(notched.centers);
    }
    if use_chunks {
        let dropped = drop_chunks(&current, seed.derive("chunks"), config)?;
        current = dropped.waveform;
        outcome.chunk_spans = Some(dropped.spans);
    }
    outcome.waveform = current;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize) -> Waveform {
        Waveform::sine(440.0, 0.5, len, 16_000).unwrap()
    }

    #[test]
    fn unit_gain_at_zero_db_equal_rms() {
        assert_eq!(noise_gain(0.3, 0.3, 0.0), 1.0);
        assert!((noise_gain(0.3, 0.3, 15.0) - 0.177_827_941).abs() < 1e-9);
    }

    #[test]
    fn silent_noise_rejected() {
        let noise = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        assert!(matches!(mix_noise(&tone(4000), &noise, 5.0, 0), Err(DspError::SilentNoise)));
    }

    #[test]
    fn silent_signal_and_rate_mismatch_rejected() {
        let silent = Waveform::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(mix_noise(&silent, &tone(100), 5.0, 0), Err(DspError::SilentSignal)));
        let other = Waveform::sine(100.0, 1.0, 100, 8000).unwrap();
        assert!(matches!(mix_noise(&tone(100), &other, 5.0, 0), Err(DspError::RateMismatch { .. })));
        assert!(matches!(mix_noise(&tone(100), &tone(100), 5.0, 1), Err(DspError::NoiseTooShort { .. })));
    }

    #[test]
    fn notch_count_outside_range() {
        let err = apply_notches(&tone(4000), 6, Seed(1), &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, DspError::CountOutOfRange { count: 6, low: 2, high: 5 }));
    }

    #[test]
    fn notch_band_above_nyquist() {
        let slow = Waveform::sine(100.0, 0.5, 4000, 8000).unwrap();
        let err = apply_notches(&slow, 3, Seed(1), &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, DspError::NotchBandOutOfRange { .. }));
    }

    #[test]
    fn forced_single_chunk_on_short_signal() {
        let cfg = AugmentConfig { chunk_count_range: [1, 1], chunk_len_range: [1000, 1000], ..Default::default() };
        let w = Waveform::new(vec![0.5; 1500], 16_000).unwrap();
        let out = drop_chunks(&w, Seed(9), &cfg).unwrap();
        let zeros = out.waveform.samples().iter().filter(|&&s| s == 0.0).count();
        assert_eq!(zeros, 1000);
        assert_eq!(out.waveform.len() - zeros, 500);
    }

    #[test]
    fn too_short_for_any_chunk() {
        let w = Waveform::new(vec![0.5; 999], 16_000).unwrap();
        assert!(matches!(drop_chunks(&w, Seed(0), &AugmentConfig::default()), Err(DspError::SignalTooShort { .. })));
    }

    #[test]
    fn zero_probability_is_identity() {
        let cfg = AugmentConfig { per_augmentation_probability: 0.0, ..Default::default() };
        let w = tone(20_000);
        let out = augment_clip(&w, &[], Seed(5), &cfg).unwrap();
        assert_eq!(out.waveform, w);
        assert!(out.noise.is_none() && out.notch_centers.is_none() && out.chunk_spans.is_none());
    }

    #[test]
    fn empty_bank_with_noise_enabled() {
        let cfg = AugmentConfig { per_augmentation_probability: 1.0, ..Default::default() };
        assert!(matches!(augment_clip(&tone(20_000), &[], Seed(5), &cfg), Err(DspError::EmptyNoiseBank)));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = AugmentConfig { per_augmentation_probability: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = AugmentConfig { chunk_count_range: [3, 2], ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
