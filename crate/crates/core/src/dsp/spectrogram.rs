//! Waveforms, log-mel spectrograms, and context-window extraction.

use std::io::Read;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::mel::MelFilterbank;
use crate::error::{Error, Result};

/// Internal processing rate; loaders resample everything to this.
pub const INTERNAL_SAMPLE_RATE_HZ: u32 = 16_000;

/// Mono audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("waveform is empty".to_string()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Audio("sample rate must be positive".to_string()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::Audio("waveform contains non-finite samples".to_string()));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linear-interpolation resample. Identity when rates already match.
    pub fn resampled(&self, target_rate_hz: u32) -> Result<Waveform> {
        if target_rate_hz == 0 {
            return Err(Error::Audio("target rate must be positive".to_string()));
        }
        if target_rate_hz == self.sample_rate_hz {
            return Ok(self.clone());
        }
        let ratio = self.sample_rate_hz as f64 / target_rate_hz as f64;
        let out_len = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let mut out = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let s0 = self.samples[i0.min(self.samples.len() - 1)];
            let s1 = self.samples[(i0 + 1).min(self.samples.len() - 1)];
            out.push(s0 + (s1 - s0) * frac);
        }
        Waveform::new(out, target_rate_hz)
    }
}

/// Mel frontend parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectrogramConfig {
    pub mel_channels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub log_floor: f64,
    pub mel_fmin_hz: f64,
    pub mel_fmax_hz: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            mel_channels: 128,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            log_floor: 1e-6,
            mel_fmin_hz: 60.0,
            mel_fmax_hz: 7800.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.window_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.mel_channels == 0 {
            return Err(Error::Config("mel_channels must be positive".to_string()));
        }
        if self.window_ms < self.hop_ms {
            return Err(Error::Config(format!(
                "window_ms {} must be >= hop_ms {}",
                self.window_ms, self.hop_ms
            )));
        }
        if self.hop_ms <= 0.0 {
            return Err(Error::Config("hop_ms must be positive".to_string()));
        }
        let win = self.window_samples(sample_rate_hz);
        if win == 0 {
            return Err(Error::Config("window shorter than one sample".to_string()));
        }
        if self.fft_size < win {
            return Err(Error::Config(format!(
                "fft_size {} must be >= window length {} samples",
                self.fft_size, win
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".to_string()));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.mel_fmin_hz < self.mel_fmax_hz && self.mel_fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "mel range [{}, {}] invalid for nyquist {}",
                self.mel_fmin_hz, self.mel_fmax_hz, nyquist
            )));
        }
        Ok(())
    }

    pub fn filterbank(&self, sample_rate_hz: u32) -> Result<MelFilterbank> {
        MelFilterbank::new(
            self.mel_channels,
            self.fft_size,
            sample_rate_hz,
            self.mel_fmin_hz,
            self.mel_fmax_hz,
        )
    }

    /// Number of frames produced for a waveform of `len` samples:
    /// `floor((len - win) / hop) + 1`.
    pub fn frame_count(&self, len: usize, sample_rate_hz: u32) -> Option<usize> {
        let win = self.window_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if len < win {
            return None;
        }
        Some((len - win) / hop + 1)
    }
}

/// F x num_frames log-mel matrix, row-major by mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    values: Vec<f64>,
    mel_channels: usize,
    num_frames: usize,
    config: SpectrogramConfig,
}

impl LogMelSpectrogram {
    pub fn mel_channels(&self) -> usize {
        self.mel_channels
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.num_frames + frame]
    }

    pub fn band(&self, m: usize) -> &[f64] {
        &self.values[m * self.num_frames..(m + 1) * self.num_frames]
    }

    /// Column (one frame across all bands).
    pub fn frame_column(&self, frame: usize) -> Vec<f64> {
        (0..self.mel_channels).map(|m| self.at(m, frame)).collect()
    }

    /// Copy of frames `[start, start + len)` as a standalone spectrogram.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<LogMelSpectrogram> {
        if start + len > self.num_frames || len == 0 {
            return Err(Error::Argument(format!(
                "frame slice [{start}, {}) out of range for {} frames",
                start + len,
                self.num_frames
            )));
        }
        let mut values = Vec::with_capacity(self.mel_channels * len);
        for m in 0..self.mel_channels {
            values.extend_from_slice(&self.band(m)[start..start + len]);
        }
        Ok(LogMelSpectrogram {
            values,
            mel_channels: self.mel_channels,
            num_frames: len,
            config: self.config.clone(),
        })
    }

    /// Test/diagnostic constructor from raw values.
    pub fn from_values(
        values: Vec<f64>,
        mel_channels: usize,
        num_frames: usize,
        config: SpectrogramConfig,
    ) -> Result<Self> {
        if values.len() != mel_channels * num_frames {
            return Err(Error::Shape(format!(
                "value count {} != {mel_channels} x {num_frames}",
                values.len()
            )));
        }
        Ok(LogMelSpectrogram {
            values,
            mel_channels,
            num_frames,
            config,
        })
    }
}

/// Fixed-size F x T slab fed to the audio tower, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    values: Vec<f64>,
    mel_channels: usize,
    frames: usize,
    pub recording_id: String,
    pub start_frame: usize,
}

impl ContextWindow {
    pub fn mel_channels(&self) -> usize {
        self.mel_channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }
}

/// STFT power spectra through the mel filterbank, then `ln(eps + power)`.
pub fn compute_log_mel(w: &Waveform, cfg: &SpectrogramConfig) -> Result<LogMelSpectrogram> {
    cfg.validate(w.sample_rate_hz())?;
    let win = cfg.window_samples(w.sample_rate_hz());
    let hop = cfg.hop_samples(w.sample_rate_hz());
    let num_frames = cfg
        .frame_count(w.len(), w.sample_rate_hz())
        .ok_or_else(|| {
            Error::Audio(format!(
                "waveform of {} samples is shorter than one {win}-sample window",
                w.len()
            ))
        })?;

    let filterbank = cfg.filterbank(w.sample_rate_hz())?;
    let n_freqs = cfg.fft_size / 2 + 1;

    // Periodic Hann window.
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / win as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0; n_freqs];
    let mut band_energy = vec![0.0; cfg.mel_channels];
    let mut values = vec![0.0; cfg.mel_channels * num_frames];

    for frame in 0..num_frames {
        let start = frame * hop;
        for (b, (&s, &h)) in buf
            .iter_mut()
            .zip(w.samples()[start..start + win].iter().zip(&hann))
        {
            *b = Complex::new(s * h, 0.0);
        }
        for b in buf[win..].iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(buf[..n_freqs].iter()) {
            *p = c.norm_sqr();
        }
        filterbank.apply(&power, &mut band_energy);
        for (m, &e) in band_energy.iter().enumerate() {
            values[m * num_frames + frame] = (cfg.log_floor + e).ln();
        }
    }

    Ok(LogMelSpectrogram {
        values,
        mel_channels: cfg.mel_channels,
        num_frames,
        config: cfg.clone(),
    })
}

/// Copy frames `[start_frame, start_frame + frames)` into a context window.
pub fn extract_window(
    s: &LogMelSpectrogram,
    recording_id: &str,
    start_frame: usize,
    frames: usize,
) -> Result<ContextWindow> {
    if frames == 0 {
        return Err(Error::Argument("window length must be positive".to_string()));
    }
    if start_frame + frames > s.num_frames() {
        return Err(Error::Argument(format!(
            "window [{start_frame}, {}) out of range for {} frames",
            start_frame + frames,
            s.num_frames()
        )));
    }
    let f = s.mel_channels();
    let mut values = Vec::with_capacity(f * frames);
    for m in 0..f {
        values.extend_from_slice(&s.band(m)[start_frame..start_frame + frames]);
    }
    Ok(ContextWindow {
        values,
        mel_channels: f,
        frames,
        recording_id: recording_id.to_string(),
        start_frame,
    })
}

/// Fit a spectrogram of any length to exactly `frames` columns: center-trim
/// when longer, right-pad with `ln(log_floor)` columns when shorter.
pub fn pad_or_trim_to_window(
    s: &LogMelSpectrogram,
    recording_id: &str,
    frames: usize,
) -> Result<ContextWindow> {
    if frames == 0 {
        return Err(Error::Argument("window length must be positive".to_string()));
    }
    if s.num_frames() >= frames {
        let start = (s.num_frames() - frames) / 2;
        return extract_window(s, recording_id, start, frames);
    }
    let f = s.mel_channels();
    let pad = s.config().log_floor.ln();
    let mut values = vec![pad; f * frames];
    for m in 0..f {
        values[m * frames..m * frames + s.num_frames()].copy_from_slice(s.band(m));
    }
    Ok(ContextWindow {
        values,
        mel_channels: f,
        frames,
        recording_id: recording_id.to_string(),
        start_frame: 0,
    })
}

const DUMP_MAGIC: &[u8; 8] = b"MLSPEC01";

/// Binary spectrogram dump: magic, u32 F, u32 num_frames, then row-major f64.
pub fn write_spectrogram(s: &LogMelSpectrogram, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + s.values().len() * 8);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(s.mel_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(s.num_frames() as u32).to_le_bytes());
    for &v in s.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a spectrogram dump back. The config on the result is a default with
/// only the channel count guaranteed; dumps carry values, not parameters.
pub fn read_spectrogram(path: &Path) -> Result<LogMelSpectrogram> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[..8] != DUMP_MAGIC {
        return Err(Error::Integrity("bad spectrogram magic".to_string()));
    }
    let f = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != f * frames * 8 {
        return Err(Error::Integrity(format!(
            "spectrogram payload {} bytes, expected {}",
            raw.len(),
            f * frames * 8
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let config = SpectrogramConfig {
        mel_channels: f,
        ..Default::default()
    };
    LogMelSpectrogram::from_values(values, f, frames, config)
}
