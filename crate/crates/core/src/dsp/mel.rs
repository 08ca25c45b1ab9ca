//! Triangular mel filterbank on the HTK mel scale.
//!
//! `mel = 2595 * log10(1 + f / 700)`. Filters are triangles with unit peak
//! and no area normalization; filter `m` rises from mel point `m` to `m+1`
//! and falls to `m+2`, with the F+2 points spaced uniformly in mel between
//! `fmin` and `fmax`.

use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed filterbank: `mel_channels` rows of weights over the FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    mel_channels: usize,
    n_freqs: usize,
    /// Filter edge frequencies in Hz: `edges[m]..edges[m+2]` is filter m's support.
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(
        mel_channels: usize,
        fft_size: usize,
        sample_rate_hz: u32,
        fmin_hz: f64,
        fmax_hz: f64,
    ) -> Result<Self> {
        if mel_channels == 0 {
            return Err(Error::Config("mel_channels must be positive".to_string()));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "mel range [{fmin_hz}, {fmax_hz}] must satisfy 0 <= fmin < fmax <= {nyquist}"
            )));
        }
        let n_freqs = fft_size / 2 + 1;
        let mel_lo = hz_to_mel(fmin_hz);
        let mel_hi = hz_to_mel(fmax_hz);
        let n_points = mel_channels + 2;
        let edges_hz: Vec<f64> = (0..n_points)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64))
            .collect();

        let bin_hz = sample_rate_hz as f64 / fft_size as f64;
        let mut weights = vec![0.0; mel_channels * n_freqs];
        for m in 0..mel_channels {
            let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            let row = &mut weights[m * n_freqs..(m + 1) * n_freqs];
            for (k, w) in row.iter_mut().enumerate() {
                *w = triangle(k as f64 * bin_hz, lo, center, hi);
            }
        }
        Ok(MelFilterbank {
            weights,
            mel_channels,
            n_freqs,
            edges_hz,
        })
    }

    pub fn mel_channels(&self) -> usize {
        self.mel_channels
    }

    pub fn n_freqs(&self) -> usize {
        self.n_freqs
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_freqs..(m + 1) * self.n_freqs]
    }

    /// Peak frequency of filter `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// Filter responses evaluated at an arbitrary continuous frequency.
    pub fn response_at(&self, freq_hz: f64) -> Vec<f64> {
        (0..self.mel_channels)
            .map(|m| {
                triangle(
                    freq_hz,
                    self.edges_hz[m],
                    self.edges_hz[m + 1],
                    self.edges_hz[m + 2],
                )
            })
            .collect()
    }

    /// Band with the strongest response to a pure tone at `freq_hz`, if any
    /// filter responds at all.
    pub fn argmax_band_for(&self, freq_hz: f64) -> Option<usize> {
        let resp = self.response_at(freq_hz);
        let (band, best) = resp
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
        (best > 0.0).then_some(band)
    }

    /// Filter energies for one power spectrum frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_freqs);
        debug_assert_eq!(out.len(), self.mel_channels);
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.weights[m * self.n_freqs..(m + 1) * self.n_freqs];
            *o = row.iter().zip(power).map(|(&w, &p)| w * p).sum();
        }
    }
}

fn triangle(f: f64, lo: f64, center: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        return 0.0;
    }
    if f <= center {
        (f - lo) / (center - lo)
    } else {
        (hi - f) / (hi - center)
    }
}
