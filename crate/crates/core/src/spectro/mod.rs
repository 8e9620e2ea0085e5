//! Log-mel spectrograms and blank-region clipping.
//!
//! Grids are stored row-major with row 0 at the lowest frequency.

mod blank;
mod io;

pub use blank::{blank_region_clip, BlankClipConfig};
pub use io::{read_grid, write_grid, write_pgm, GridIoError};

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error, PartialEq)]
pub enum SpectroError {
    #[error("clip of {len} samples is shorter than one {window}-sample window")]
    ClipTooShort { len: usize, window: usize },
    #[error("invalid spectrogram config: {0}")]
    InvalidConfig(String),
    #[error("degenerate mel band: fmin {fmin} Hz >= fmax {fmax} Hz")]
    DegenerateBand { fmin: f64, fmax: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrogramConfig {
    pub window_len: usize,
    pub hop_len: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop_len: 128,
            n_mels: 64,
            fmin: 50.0,
            fmax: 2000.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), SpectroError> {
        let bad = |m: String| Err(SpectroError::InvalidConfig(m));
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return bad(format!(
                "need 0 < hop_len ({}) <= window_len ({})",
                self.hop_len, self.window_len
            ));
        }
        if self.n_mels < 2 {
            return bad(format!("n_mels must be at least 2, got {}", self.n_mels));
        }
        if !(self.log_floor > 0.0) {
            return bad(format!(
                "log_floor must be positive, got {}",
                self.log_floor
            ));
        }
        if self.fmin >= self.fmax {
            return Err(SpectroError::DegenerateBand {
                fmin: self.fmin,
                fmax: self.fmax,
            });
        }
        let nyquist = sample_rate as f64 / 2.0;
        if self.fmin < 0.0 || self.fmax > nyquist {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({nyquist})",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            1 + (n_samples - self.window_len) / self.hop_len
        }
    }

    pub fn n_freq_bins(&self) -> usize {
        self.window_len / 2 + 1
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Keeps rows `0..n`.
    pub(crate) fn truncate_rows(&mut self, n: usize) {
        self.rows = n.min(self.rows);
        self.data.truncate(self.rows * self.cols);
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frequency span of one mel row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelBand {
    pub low_hz: f64,
    pub center_hz: f64,
    pub high_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// Log energies, `n_mels x n_frames` (fewer rows after blank clipping).
    pub values: Grid,
    /// One band per row of `values`.
    pub bands: Vec<MelBand>,
    pub config: SpectrogramConfig,
    pub sample_rate: u32,
    /// Reference level used by a previous blank clip, if any.
    pub blank_floor: Option<f64>,
}

impl MelSpectrogram {
    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }

    /// Time-averaged log energy of each row.
    pub fn row_means(&self) -> Vec<f64> {
        (0..self.n_rows())
            .map(|r| {
                let row = self.values.row(r);
                row.iter().sum::<f64>() / row.len().max(1) as f64
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .data()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Periodic Hann window (the DFT-even form).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_clip(clip: &AudioClip, config: &SpectrogramConfig) -> Result<(), SpectroError> {
    config.validate(clip.sample_rate())?;
    if clip.len() < config.window_len {
        return Err(SpectroError::ClipTooShort {
            len: clip.len(),
            window: config.window_len,
        });
    }
    Ok(())
}

/// Power spectrum frames `|X|^2`, `n_freq_bins x n_frames`.
fn stft_power(clip: &AudioClip, config: &SpectrogramConfig) -> Grid {
    let n = config.window_len;
    let frames = config.n_frames(clip.len());
    let bins = config.n_freq_bins();
    let window = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Grid::zeros(bins, frames);
    let x = clip.samples();
    for f in 0..frames {
        let start = f * config.hop_len;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(x[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in buf.iter().take(bins).enumerate() {
            out.set(k, f, v.norm_sqr());
        }
    }
    out
}

/// Hann-windowed STFT magnitudes, `n_freq_bins x n_frames`.
pub fn stft_magnitude(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Grid, SpectroError> {
    check_clip(clip, config)?;
    let power = stft_power(clip, config);
    let data = power.data().iter().map(|p| p.sqrt()).collect();
    Ok(Grid::from_vec(power.rows(), power.cols(), data))
}

/// Triangular mel filterbank, `n_mels x n_freq_bins`, with the band of each
/// row. Centers are equally spaced on the mel scale between `fmin` and `fmax`.
pub fn mel_filterbank(
    config: &SpectrogramConfig,
    sample_rate: u32,
) -> Result<(Grid, Vec<MelBand>), SpectroError> {
    config.validate(sample_rate)?;
    let bins = config.n_freq_bins();
    let bin_hz = sample_rate as f64 / config.window_len as f64;
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();

    let mut bank = Grid::zeros(config.n_mels, bins);
    let mut bands = Vec::with_capacity(config.n_mels);
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut area = 0.0;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            bank.set(m, k, w);
            area += w;
        }
        if area == 0.0 {
            // Triangle narrower than the bin spacing: use the nearest bin.
            let k = ((center / bin_hz).round() as usize).min(bins - 1);
            bank.set(m, k, 1.0);
        }
        bands.push(MelBand {
            low_hz: left,
            center_hz: center,
            high_hz: right,
        });
    }
    Ok((bank, bands))
}

pub fn mel_spectrogram(
    clip: &AudioClip,
    config: &SpectrogramConfig,
) -> Result<MelSpectrogram, SpectroError> {
    check_clip(clip, config)?;
    let power = stft_power(clip, config);
    let (bank, bands) = mel_filterbank(config, clip.sample_rate())?;
    let frames = power.cols();
    let mut values = Grid::zeros(config.n_mels, frames);
    for m in 0..config.n_mels {
        let weights = bank.row(m);
        let support: Vec<(usize, f64)> = weights
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
            .collect();
        for f in 0..frames {
            let e: f64 = support.iter().map(|&(k, w)| w * power.get(k, f)).sum();
            values.set(m, f, e.max(config.log_floor).ln());
        }
    }
    Ok(MelSpectrogram {
        values,
        bands,
        config: *config,
        sample_rate: clip.sample_rate(),
        blank_floor: None,
    })
}
