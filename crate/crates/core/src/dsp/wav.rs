//! RIFF/WAV loading and writing: PCM 16-bit, stereo averaged to mono.

use std::path::Path;

use crate::dsp::spectrogram::{Waveform, INTERNAL_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Load a 16-bit PCM WAV at its native rate, averaging channels to mono.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: only 16-bit PCM is supported (got {:?} {}-bit)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    let mut samples = Vec::new();
    let mut frame = Vec::with_capacity(channels);
    for s in reader.samples::<i16>() {
        let s = s.map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        frame.push(s as f64 / 32768.0);
        if frame.len() == channels {
            samples.push(frame.iter().sum::<f64>() / channels as f64);
            frame.clear();
        }
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Load and resample to the fixed internal rate.
pub fn load_wav_as_internal(path: &Path) -> Result<Waveform> {
    load_wav(path)?.resampled(INTERNAL_SAMPLE_RATE_HZ)
}

/// Write a mono 16-bit PCM WAV; samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    for &s in waveform.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    Ok(())
}
