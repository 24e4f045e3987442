//! Waveform representation, WAV I/O, STFT analysis and energy primitives.
//!
//! Everything downstream (detection, editing, metrics) consumes the canonical
//! internal format: mono, 16 kHz, 32-bit float samples. Inputs at other rates
//! are resampled on load by linear interpolation so that every threshold in
//! the pipeline is defined against a single rate.

mod stft;
mod wav;

pub use stft::{istft, stft, stft_complex, ComplexSpectrogram, Spectrogram};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Canonical sample rate in Hz. All processing happens at this rate.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Default analysis frame length in samples.
pub const DEFAULT_FRAME_LEN: usize = 1024;

/// Default analysis hop in samples (75% overlap with the default frame).
pub const DEFAULT_HOP: usize = 256;

/// Errors from audio loading and analysis.
#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV data: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("input too short: need at least {needed} samples, got {got}")]
    EmptyInput { needed: usize, got: usize },
    #[error("waveform shapes differ: {0} vs {1} samples")]
    ShapeMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    /// Wraps raw samples. Panics if `sample_rate` is zero or any sample is
    /// not finite, which are constructor bugs rather than data errors.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        assert!(
            samples.iter().all(|s| s.is_finite()),
            "waveform samples must be finite"
        );
        Self { samples, sample_rate }
    }

    /// Zero-filled waveform of `duration` seconds.
    pub fn silence(duration: f64, sample_rate: u32) -> Self {
        let n = (duration * sample_rate as f64).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
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

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Nyquist frequency in Hz.
    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    /// Converts a time in seconds to a clamped sample index.
    pub fn sample_at(&self, t: f64) -> usize {
        ((t * self.sample_rate as f64).floor() as usize).min(self.samples.len())
    }

    /// Resamples to `target_rate` by linear interpolation. Returns a clone
    /// when the rate already matches.
    pub fn resampled(&self, target_rate: u32) -> Waveform {
        assert!(target_rate > 0);
        if self.sample_rate == target_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target_rate.max(1));
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64) / ratio).round() as usize;
        let mut out = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = (pos - i0 as f64) as f32;
            let s0 = self.samples[i0.min(self.samples.len() - 1)];
            let s1 = self.samples[(i0 + 1).min(self.samples.len() - 1)];
            out.push(s0 + (s1 - s0) * frac);
        }
        Waveform::new(out, target_rate)
    }

    /// Resamples to the canonical 16 kHz format if needed.
    pub fn to_canonical(&self) -> Waveform {
        self.resampled(CANONICAL_SAMPLE_RATE)
    }

    /// Root-mean-square amplitude over the whole waveform (0 when empty).
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }
}

/// Ordered, non-overlapping frequency bands in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: Vec<(f64, f64)>,
}

impl BandSet {
    /// Builds a band set, validating that bands are ascending,
    /// non-overlapping and non-negative.
    pub fn new(bands: Vec<(f64, f64)>) -> Result<Self, AudioError> {
        let mut prev_high = 0.0f64;
        for &(low, high) in &bands {
            if low < 0.0 || low >= high {
                return Err(AudioError::Argument(format!(
                    "invalid band ({low}, {high})"
                )));
            }
            if low < prev_high {
                return Err(AudioError::Argument(format!(
                    "band ({low}, {high}) overlaps previous band"
                )));
            }
            prev_high = high;
        }
        Ok(Self { bands })
    }

    /// `count` log-spaced (octave) subbands covering [0, nyquist]: each band
    /// above the first spans double the width of the one below it.
    pub fn log_spaced(count: usize, nyquist: f64) -> Self {
        assert!(count >= 1 && nyquist > 0.0);
        let mut edges = Vec::with_capacity(count + 1);
        for i in 0..=count {
            if i == 0 {
                edges.push(0.0);
            } else {
                edges.push(nyquist / 2f64.powi((count - i) as i32));
            }
        }
        let bands = edges.windows(2).map(|w| (w[0], w[1])).collect();
        Self { bands }
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Sums squared magnitudes over bins with center frequency in `[low, high)`,
/// across all frames. The bin at exactly the Nyquist frequency is included
/// when `high` reaches it, so a partition of [0, Nyquist] captures the full
/// spectral energy.
pub fn band_energy(spec: &Spectrogram, band: (f64, f64)) -> Result<f64, AudioError> {
    let (low, high) = band;
    if low < 0.0 || low >= high {
        return Err(AudioError::Argument(format!(
            "inverted or negative band ({low}, {high})"
        )));
    }
    let nyquist = spec.sample_rate() as f64 / 2.0;
    let mut energy = 0.0f64;
    for k in 0..spec.bins() {
        let center = spec.bin_frequency(k);
        let in_band = (center >= low && center < high)
            || (high >= nyquist && (center - nyquist).abs() < 1e-9);
        if !in_band {
            continue;
        }
        for f in 0..spec.frames() {
            let m = spec.magnitude(f, k) as f64;
            energy += m * m;
        }
    }
    Ok(energy)
}

/// Total spectral energy: sum of squared magnitudes over every cell.
pub fn total_energy(spec: &Spectrogram) -> f64 {
    let mut energy = 0.0f64;
    for f in 0..spec.frames() {
        for k in 0..spec.bins() {
            let m = spec.magnitude(f, k) as f64;
            energy += m * m;
        }
    }
    energy
}

/// Splits the waveform into consecutive `seg_len`-second segments and reports
/// `(t0, t1, rms)` per segment. A final partial segment is kept only when it
/// covers at least 25% of `seg_len`. An empty waveform yields an empty list.
pub fn rms_segments(w: &Waveform, seg_len: f64) -> Result<Vec<(f64, f64, f64)>, AudioError> {
    if seg_len <= 0.0 || !seg_len.is_finite() {
        return Err(AudioError::Argument(format!(
            "segment length must be positive, got {seg_len}"
        )));
    }
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let sr = w.sample_rate() as f64;
    let seg_samples = (seg_len * sr).round() as usize;
    let seg_samples = seg_samples.max(1);
    let mut out = Vec::new();
    let mut start = 0usize;
    while start < w.len() {
        let end = (start + seg_samples).min(w.len());
        let n = end - start;
        if end == w.len() && n < seg_samples && (n as f64) < 0.25 * seg_samples as f64 {
            break;
        }
        let sum: f64 = w.samples()[start..end]
            .iter()
            .map(|&s| (s as f64) * (s as f64))
            .sum();
        let rms = (sum / n as f64).sqrt();
        out.push((start as f64 / sr, end as f64 / sr, rms));
        start = end;
    }
    Ok(out)
}
