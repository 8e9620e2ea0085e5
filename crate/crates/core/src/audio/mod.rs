//! Waveform handling: the conditioning chain that runs before feature
//! extraction (resample to the working rate, band-pass, peak-normalize).

mod filter;
mod resample;
mod wav;

pub use filter::{
    apply_filter, design_butterworth_bandpass, FilterCoefficients, FilterDesign, Sos,
};
pub use resample::resample;
pub(crate) use wav::quantize_i16;
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, WavError};

use thiserror::Error;

/// Working sample rate of the whole pipeline.
pub const TARGET_RATE: u32 = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("band edges out of range: need 0 < low ({low_hz} Hz) < high ({high_hz} Hz) < nyquist ({nyquist_hz} Hz)")]
    BandEdges {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },
    #[error("filter order must be at least 1, got {0}")]
    FilterOrder(usize),
    #[error("filter designed for {filter} Hz applied to a {clip} Hz clip")]
    RateMismatch { filter: u32, clip: u32 },
}

/// Mono waveform with its sample rate. Samples are dimensionless amplitude,
/// nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
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

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-clip `[start, end)` in samples; panics if out of range.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Same samples reinterpreted at a different rate (used for speed change).
    pub(crate) fn with_rate(self, sample_rate: u32) -> AudioClip {
        AudioClip {
            samples: self.samples,
            sample_rate,
        }
    }

    /// Mean power of the samples; zero for an empty clip.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Peak normalization to [-1, 1]. All-zero clips pass through unchanged.
pub fn normalize(clip: &AudioClip) -> AudioClip {
    let peak = clip.peak();
    if peak == 0.0 {
        return clip.clone();
    }
    AudioClip {
        samples: clip.samples.iter().map(|x| x / peak).collect(),
        sample_rate: clip.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_rate_rejected() {
        assert_eq!(
            AudioClip::new(vec![0.0], 0),
            Err(AudioError::ZeroSampleRate)
        );
    }

    #[test]
    fn normalize_scales_by_peak() {
        let clip = AudioClip::new(vec![0.5, -0.25], 4000).unwrap();
        assert_eq!(normalize(&clip).samples(), &[1.0, -0.5]);
    }

    #[test]
    fn normalize_leaves_silence() {
        let clip = AudioClip::new(vec![0.0; 16], 4000).unwrap();
        assert_eq!(normalize(&clip), clip);
    }

    proptest! {
        #[test]
        fn normalize_peak_is_one_and_idempotent(
            v in proptest::collection::vec(-10.0f64..10.0, 1..200)
        ) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let clip = AudioClip::new(v, 4000).unwrap();
            let once = normalize(&clip);
            prop_assert_eq!(once.peak(), 1.0);
            let twice = normalize(&once);
            prop_assert!(once.samples().iter().zip(twice.samples()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
