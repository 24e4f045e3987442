//! WAV file I/O. Reads PCM16 or IEEE f32, downmixes to mono, and resamples
//! to the canonical 16 kHz rate; writes mono f32.

use std::path::Path;

use super::{AudioError, Waveform, CANONICAL_SAMPLE_RATE};

/// Reads a WAV file and returns it in canonical form (mono, 16 kHz, f32).
/// Multi-channel input is downmixed by averaging; PCM16 samples are scaled
/// by 1/32768. Other sample formats are rejected.
pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::Format(format!(
            "{}: zero channels",
            path.display()
        )));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(AudioError::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples (expected 16-bit int or 32-bit float)",
                path.display()
            )))
        }
    };

    let channels = spec.channels as usize;
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();

    Ok(Waveform::new(mono, spec.sample_rate).to_canonical())
}

/// Writes a waveform as a mono 32-bit float WAV at the canonical rate,
/// resampling first when needed.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), AudioError> {
    let canonical = w.to_canonical();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: CANONICAL_SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?;
    for &s in canonical.samples() {
        writer
            .write_sample(s)
            .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| AudioError::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize, amplitude: f32, sr: u32) -> Vec<f32> {
        (0..n)
            .map(|i| amplitude * (2.0 * PI * freq * i as f64 / sr as f64).sin() as f32)
            .collect()
    }

    #[test]
    fn roundtrip_f32_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(tone(440.0, 8000, 0.5, 16_000), 16_000);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16_000);
        assert_eq!(back.samples(), w.samples());
    }

    #[test]
    fn pcm16_is_scaled_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -16384, 32767, -32768] {
            writer.write_sample(v).unwrap();
        }
        writer.finalize().unwrap();

        let w = read_wav(&path).unwrap();
        assert_eq!(w.len(), 5);
        assert!((w.samples()[0] - 0.0).abs() < 1e-7);
        assert!((w.samples()[1] - 0.5).abs() < 1e-7);
        assert!((w.samples()[2] + 0.5).abs() < 1e-7);
        assert!(w.samples()[3] > 0.999);
        assert!((w.samples()[4] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn stereo_downmixes_by_average() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..100 {
            let v = i as f32 / 100.0;
            writer.write_sample(v).unwrap();
            writer.write_sample(-v).unwrap();
        }
        writer.finalize().unwrap();

        let w = read_wav(&path).unwrap();
        assert_eq!(w.len(), 100);
        assert!(w.samples().iter().all(|s| s.abs() < 1e-7));
    }

    #[test]
    fn non_canonical_rate_is_resampled_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hi.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for s in tone(440.0, 48_000, 0.5, 48_000) {
            writer.write_sample(s).unwrap();
        }
        writer.finalize().unwrap();

        let w = read_wav(&path).unwrap();
        assert_eq!(w.sample_rate(), 16_000);
        assert!((w.duration() - 1.0).abs() < 1e-3);
        // A 440 Hz tone survives resampling with its RMS nearly intact.
        assert!((w.rms() - 0.5 / 2f64.sqrt()).abs() < 5e-3);
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            writer.write_sample(0i8).unwrap();
        }
        writer.finalize().unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(AudioError::Unsupported(_))
        ));
    }

    #[test]
    fn missing_file_is_a_format_error() {
        let err = read_wav(Path::new("/nonexistent/nope.wav")).unwrap_err();
        assert!(matches!(err, AudioError::Format(_)));
    }
}
