//! Hann-windowed STFT analysis and overlap-add resynthesis.

use super::{AudioError, Waveform};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Magnitude spectrogram (frame-major grid of one-sided bins).
///
/// Magnitudes carry a Parseval normalization: the sum of squared magnitudes
/// of one frame equals the energy of that Hann-windowed frame, so band and
/// total energies read directly off the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f32>,
    frames: usize,
    bins: usize,
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// One-sided bin count: `frame_len / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> f32 {
        self.magnitudes[frame * self.bins + bin]
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len as f64
    }

    /// Start time of frame `f` in seconds (analysis without padding).
    pub fn frame_time(&self, f: usize) -> f64 {
        (f * self.hop) as f64 / self.sample_rate as f64
    }

    /// Energy of one frame restricted to bins with center frequency in
    /// `[low, high)`, Nyquist-inclusive at the top edge.
    pub fn frame_band_energy(&self, frame: usize, low: f64, high: f64) -> f64 {
        let nyquist = self.sample_rate as f64 / 2.0;
        let mut e = 0.0f64;
        for k in 0..self.bins {
            let c = self.bin_frequency(k);
            let in_band =
                (c >= low && c < high) || (high >= nyquist && (c - nyquist).abs() < 1e-9);
            if in_band {
                let m = self.magnitude(frame, k) as f64;
                e += m * m;
            }
        }
        e
    }
}

/// Periodic Hann window of length `n`.
pub(crate) fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

fn validate_framing(frame_len: usize, hop: usize) -> Result<(), AudioError> {
    if frame_len == 0 || !frame_len.is_power_of_two() {
        return Err(AudioError::Argument(format!(
            "frame length must be a power of two, got {frame_len}"
        )));
    }
    if hop == 0 || hop > frame_len {
        return Err(AudioError::Argument(format!(
            "hop must satisfy 0 < hop <= frame length, got {hop}"
        )));
    }
    Ok(())
}

/// Hann-windowed magnitude STFT without padding: frame `f` covers samples
/// `[f*hop, f*hop + frame_len)` and the frame count is
/// `floor((len - frame_len) / hop) + 1`.
pub fn stft(w: &Waveform, frame_len: usize, hop: usize) -> Result<Spectrogram, AudioError> {
    validate_framing(frame_len, hop)?;
    if w.len() < frame_len {
        return Err(AudioError::EmptyInput {
            needed: frame_len,
            got: w.len(),
        });
    }
    let n_frames = (w.len() - frame_len) / hop + 1;
    let bins = frame_len / 2 + 1;
    let window = hann(frame_len);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(frame_len);
    let norm = 1.0 / (frame_len as f32).sqrt();

    let mut magnitudes = Vec::with_capacity(n_frames * bins);
    let mut buf = vec![Complex::new(0.0f32, 0.0); frame_len];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(w.samples()[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            let weight = if k == 0 || k == frame_len / 2 {
                1.0f32
            } else {
                2.0f32.sqrt()
            };
            magnitudes.push(c.norm() * weight * norm);
        }
    }
    Ok(Spectrogram {
        magnitudes,
        frames: n_frames,
        bins,
        frame_len,
        hop,
        sample_rate: w.sample_rate(),
    })
}

/// Complex STFT with zero-padded, fully-covering framing, retained for exact
/// overlap-add resynthesis via [`istft`].
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    frames: Vec<Vec<Complex<f32>>>,
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
    orig_len: usize,
    pad: usize,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center time of frame `f` in seconds of the original (unpadded) signal.
    /// Leading frames that cover only padding have negative centers.
    pub fn frame_center_time(&self, f: usize) -> f64 {
        let center = (f * self.hop + self.frame_len / 2) as f64 - self.pad as f64;
        center / self.sample_rate as f64
    }

    /// Center frequency of bin `k` (valid for the one-sided range
    /// `0..=frame_len/2`).
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len as f64
    }

    /// Raw magnitude of bin `k` in frame `f` (unnormalized FFT output).
    pub fn bin_magnitude(&self, frame: usize, k: usize) -> f32 {
        self.frames[frame][k].norm()
    }

    /// Scales bin `k` of frame `f` (and its conjugate mirror, keeping the
    /// resynthesized signal real) by `gain`.
    pub fn scale_bin(&mut self, frame: usize, k: usize, gain: f32) {
        let n = self.frame_len;
        self.frames[frame][k] *= gain;
        let mirror = (n - k) % n;
        if mirror != k {
            self.frames[frame][mirror] *= gain;
        }
    }
}

/// Complex analysis for masking chains: the signal is zero-padded by one
/// frame on the left and enough on the right that every sample sits under a
/// full complement of overlapping windows, making [`istft`] an exact
/// inverse up to floating-point rounding.
pub fn stft_complex(
    w: &Waveform,
    frame_len: usize,
    hop: usize,
) -> Result<ComplexSpectrogram, AudioError> {
    validate_framing(frame_len, hop)?;
    if w.is_empty() {
        return Err(AudioError::EmptyInput {
            needed: 1,
            got: 0,
        });
    }
    let pad = frame_len;
    let covered = pad + w.len();
    let n_frames = covered.div_ceil(hop);
    let padded_len = (n_frames - 1) * hop + frame_len;
    let mut padded = vec![0.0f32; padded_len];
    padded[pad..pad + w.len()].copy_from_slice(w.samples());

    let window = hann(frame_len);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(frame_len);
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * hop;
        let mut buf: Vec<Complex<f32>> = (0..frame_len)
            .map(|i| Complex::new(padded[start + i] * window[i], 0.0))
            .collect();
        fft.process(&mut buf);
        frames.push(buf);
    }
    Ok(ComplexSpectrogram {
        frames,
        frame_len,
        hop,
        sample_rate: w.sample_rate(),
        orig_len: w.len(),
        pad,
    })
}

/// Overlap-add resynthesis with the Hann synthesis window and per-sample
/// window-energy normalization. Inverse of [`stft_complex`].
pub fn istft(spec: &ComplexSpectrogram) -> Waveform {
    let n = spec.frame_len;
    let hop = spec.hop;
    let n_frames = spec.frames.len();
    let padded_len = (n_frames.max(1) - 1) * hop + n;
    let window = hann(n);
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(n);

    let mut acc = vec![0.0f64; padded_len];
    let mut wsum = vec![0.0f64; padded_len];
    let mut buf = vec![Complex::new(0.0f32, 0.0); n];
    for (f, frame) in spec.frames.iter().enumerate() {
        buf.copy_from_slice(frame);
        ifft.process(&mut buf);
        let start = f * hop;
        for i in 0..n {
            // rustfft's inverse is unnormalized: divide by n.
            let sample = buf[i].re as f64 / n as f64;
            acc[start + i] += sample * window[i] as f64;
            wsum[start + i] += (window[i] as f64) * (window[i] as f64);
        }
    }
    let mut out = Vec::with_capacity(spec.orig_len);
    for i in spec.pad..spec.pad + spec.orig_len {
        let denom = wsum[i].max(1e-12);
        out.push((acc[i] / denom) as f32);
    }
    Waveform::new(out, spec.sample_rate)
}
