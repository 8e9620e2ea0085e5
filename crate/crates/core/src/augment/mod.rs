//! Training-time data augmentation, length standardization and
//! class-balanced sampling.

mod pad;
mod sampler;
mod stretch;

pub use pad::{
    neighbor_eligible, pad_baseline, smart_pad, FixedLengthSample, PadMode, Segment, SegmentSource,
};
pub use sampler::{class_weights, per_cycle_probability, weighted_sample, SamplerWeights};
pub use stretch::time_stretch;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{resample, AudioClip, AudioError};
use crate::dataset::{BreathingCycle, ClassLabel};
use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("cannot draw from an empty pool")]
    EmptyPool,
    #[error("pool mixes labels {0} and {1}")]
    MixedLabels(ClassLabel, ClassLabel),
    #[error("target length must be at least one sample")]
    TargetLen,
    #[error("cycle has no samples")]
    EmptyCycle,
    #[error("unknown augmentation `{0}` (expected noise, speed, shift or pitch)")]
    UnknownKind(String),
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error("no samples in any class")]
    NoSamples,
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Noise,
    Speed,
    Shift,
    Pitch,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [Self::Noise, Self::Speed, Self::Shift, Self::Pitch];

    fn name(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Speed => "speed",
            Self::Shift => "shift",
            Self::Pitch => "pitch",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AugmentError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Signal-to-noise ratio drawn uniformly from this range, dB.
    pub noise_snr_db: [f64; 2],
    pub speed_factor_range: [f64; 2],
    /// Largest circular shift in seconds; unset means 20% of the cycle.
    pub shift_max_s: Option<f64>,
    pub pitch_semitone_range: [f64; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            noise_snr_db: [15.0, 30.0],
            speed_factor_range: [0.9, 1.1],
            shift_max_s: None,
            pitch_semitone_range: [-1.0, 1.0],
        }
    }
}

fn ordered(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl AugmentParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::InvalidParams(m.to_string()));
        if !ordered(self.noise_snr_db) {
            return bad("noise_snr_db must be a finite [min, max] range");
        }
        if !ordered(self.speed_factor_range) || self.speed_factor_range[0] <= 0.0 {
            return bad("speed factors must be positive with min <= max");
        }
        if self
            .shift_max_s
            .is_some_and(|s| !(s >= 0.0 && s.is_finite()))
        {
            return bad("shift_max_s must be nonnegative");
        }
        if !ordered(self.pitch_semitone_range) {
            return bad("pitch_semitone_range must be a finite [min, max] range");
        }
        Ok(())
    }
}

fn draw(range: [f64; 2], rng: &mut Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Adds white Gaussian noise at `snr_db` relative to the clip's mean power.
/// Silence stays silent.
pub fn add_noise(clip: &AudioClip, snr_db: f64, rng: &mut Rng) -> AudioClip {
    let power = clip.power();
    let mut out = clip.clone();
    if power > 0.0 {
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for x in out.samples_mut() {
            *x += normal.sample(rng);
        }
    }
    out
}

/// Plays the clip `factor` times faster: length divides by `factor` and
/// every frequency multiplies by it. The factor is realized through an
/// integer source rate, so it is quantized to `1 / sample_rate`.
pub fn change_speed(clip: &AudioClip, factor: f64) -> Result<AudioClip, AudioError> {
    let rate = clip.sample_rate();
    let virtual_rate = (rate as f64 * factor).round().max(1.0) as u32;
    resample(&clip.clone().with_rate(virtual_rate), rate)
}

/// Circular rotation to the right by `k` samples (negative rotates left).
pub fn rotate(clip: &AudioClip, k: i64) -> AudioClip {
    let mut out = clip.clone();
    let n = out.len() as i64;
    if n > 0 {
        out.samples_mut().rotate_right(k.rem_euclid(n) as usize);
    }
    out
}

/// Shifts pitch by `semitones` while keeping the length.
pub fn shift_pitch(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AudioError> {
    let sped = change_speed(clip, 2f64.powf(semitones / 12.0))?;
    let stretched = time_stretch(sped.samples(), clip.len(), clip.sample_rate());
    AudioClip::new(stretched, clip.sample_rate())
}

/// One randomized augmentation of `kind`; the label and provenance fields
/// are unchanged.
pub fn standard_augment(
    cycle: &BreathingCycle,
    params: &AugmentParams,
    kind: AugmentKind,
    rng: &mut Rng,
) -> Result<BreathingCycle, AugmentError> {
    params.validate()?;
    let clip = &cycle.clip;
    let clip = match kind {
        AugmentKind::Noise => add_noise(clip, draw(params.noise_snr_db, rng), rng),
        AugmentKind::Speed => change_speed(clip, draw(params.speed_factor_range, rng))?,
        AugmentKind::Shift => {
            let max = match params.shift_max_s {
                Some(s) => (s * clip.sample_rate() as f64).round() as i64,
                None => (0.2 * clip.len() as f64).round() as i64,
            };
            rotate(clip, rng.random_range(-max..=max))
        }
        AugmentKind::Pitch => shift_pitch(clip, draw(params.pitch_semitone_range, rng))?,
    };
    Ok(BreathingCycle {
        clip,
        ..cycle.clone()
    })
}

/// Result of concatenation: the new cycle and the pool indices it was built
/// from, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Concatenated {
    pub cycle: BreathingCycle,
    pub sources: [usize; 2],
}

/// Draws two cycles uniformly with replacement from a single-class pool and
/// joins them in draw order. The result carries the first draw's metadata.
pub fn concat_augment(
    pool: &[&BreathingCycle],
    rng: &mut Rng,
) -> Result<Concatenated, AugmentError> {
    let first = pool.first().ok_or(AugmentError::EmptyPool)?;
    if let Some(other) = pool.iter().find(|c| c.label != first.label) {
        return Err(AugmentError::MixedLabels(first.label, other.label));
    }
    let a = rng.random_range(0..pool.len());
    let b = rng.random_range(0..pool.len());
    let mut samples = pool[a].clip.samples().to_vec();
    samples.extend_from_slice(pool[b].clip.samples());
    Ok(Concatenated {
        cycle: BreathingCycle {
            clip: AudioClip::new(samples, pool[a].clip.sample_rate())?,
            ..pool[a].clone()
        },
        sources: [a, b],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_recording_filename;
    use crate::rng::seeded;
    use std::f64::consts::PI;

    fn cycle(samples: Vec<f64>, label: ClassLabel) -> BreathingCycle {
        BreathingCycle {
            clip: AudioClip::new(samples, 4000).unwrap(),
            label,
            meta: parse_recording_filename("101_1b1_Al_sc_Meditron.wav").unwrap(),
            cycle_index: 0,
        }
    }

    fn tone(hz: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * hz * i as f64 / 4000.0).sin())
            .collect()
    }

    /// Brute-force DFT argmax over integer-Hz bins of a 1 s window.
    fn dominant_hz(x: &[f64]) -> usize {
        let mid = &x[x.len() / 2 - 2000..x.len() / 2 + 2000];
        (1..2000)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in mid.iter().enumerate() {
                    let ph = 2.0 * PI * f as f64 * i as f64 / 4000.0;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                (f, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn noise_power_matches_snr() {
        // Unit power: amplitude sqrt(2) sine.
        let x: Vec<f64> = tone(123.0, 200_000)
            .iter()
            .map(|v| v * 2f64.sqrt())
            .collect();
        let clip = AudioClip::new(x, 4000).unwrap();
        assert!((clip.power() - 1.0).abs() < 1e-3);
        let noisy = add_noise(&clip, 20.0, &mut seeded(1));
        let added: f64 = noisy
            .samples()
            .iter()
            .zip(clip.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / clip.len() as f64;
        assert!((added - 0.01).abs() <= 0.0005, "{added}");
        let silent = AudioClip::new(vec![0.0; 10], 4000).unwrap();
        assert_eq!(add_noise(&silent, 20.0, &mut seeded(1)), silent);
    }

    #[test]
    fn full_rotation_is_identity() {
        let clip = AudioClip::new((0..100).map(f64::from).collect(), 4000).unwrap();
        assert_eq!(rotate(&clip, 100), clip);
        assert_eq!(rotate(&clip, -100), clip);
        assert_eq!(rotate(&clip, 1).samples()[0], 99.0);
    }

    #[test]
    fn speed_raises_tone() {
        let clip = AudioClip::new(tone(400.0, 20000), 4000).unwrap();
        let fast = change_speed(&clip, 1.25).unwrap();
        assert_eq!(fast.len(), 16000);
        assert_eq!(fast.sample_rate(), 4000);
        let f = dominant_hz(fast.samples());
        assert!(f.abs_diff(500) <= 1, "{f}");
    }

    #[test]
    fn pitch_shift_keeps_length() {
        let clip = AudioClip::new(tone(400.0, 16000), 4000).unwrap();
        let up = shift_pitch(&clip, 12.0).unwrap();
        assert_eq!(up.len(), clip.len());
        assert!(dominant_hz(up.samples()).abs_diff(800) <= 2);
        let down = shift_pitch(&clip, -1.0).unwrap();
        assert!(dominant_hz(down.samples()).abs_diff(378) <= 2);
    }

    #[test]
    fn standard_augment_keeps_label() {
        let c = cycle(tone(300.0, 8000), ClassLabel::Wheeze);
        let mut rng = seeded(3);
        for kind in AugmentKind::ALL {
            let out = standard_augment(&c, &AugmentParams::default(), kind, &mut rng).unwrap();
            assert_eq!(out.label, ClassLabel::Wheeze);
            assert_eq!(out.meta, c.meta);
        }
        assert!(matches!(
            "reverb".parse::<AugmentKind>(),
            Err(AugmentError::UnknownKind(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let c = cycle(vec![0.0; 100], ClassLabel::Normal);
        let p = AugmentParams {
            speed_factor_range: [0.0, 1.0],
            ..AugmentParams::default()
        };
        assert!(standard_augment(&c, &p, AugmentKind::Speed, &mut seeded(0)).is_err());
    }

    #[test]
    fn concat_lengths_add() {
        let a = cycle(vec![1.0; 8000], ClassLabel::Crackle);
        let b = cycle(vec![2.0; 12000], ClassLabel::Crackle);
        let out = concat_augment(&[&a, &b], &mut seeded(2)).unwrap();
        let expect: usize = out.sources.iter().map(|&i| [&a, &b][i].len()).sum();
        assert_eq!(out.cycle.len(), expect);
        assert_eq!(out.cycle.label, ClassLabel::Crackle);

        let solo = concat_augment(&[&a], &mut seeded(2)).unwrap();
        assert_eq!(solo.cycle.len(), 16000);
        assert_eq!(solo.sources, [0, 0]);
    }

    #[test]
    fn concat_errors() {
        let a = cycle(vec![1.0; 8], ClassLabel::Crackle);
        let b = cycle(vec![1.0; 8], ClassLabel::Normal);
        assert_eq!(
            concat_augment(&[], &mut seeded(0)),
            Err(AugmentError::EmptyPool)
        );
        assert!(matches!(
            concat_augment(&[&a, &b], &mut seeded(0)),
            Err(AugmentError::MixedLabels(..))
        ));
    }

    #[test]
    fn concat_pairs_are_uniform() {
        let cycles: Vec<BreathingCycle> = (0..4)
            .map(|i| cycle(vec![i as f64; 4], ClassLabel::Wheeze))
            .collect();
        let pool: Vec<&BreathingCycle> = cycles.iter().collect();
        let mut rng = seeded(8);
        let mut counts = [[0usize; 4]; 4];
        let n = 10_000;
        for _ in 0..n {
            let [a, b] = concat_augment(&pool, &mut rng).unwrap().sources;
            counts[a][b] += 1;
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / n as f64 - 1.0 / 16.0).abs() <= 0.02);
            }
        }
    }
}
