//! Rational-ratio windowed-sinc resampler.
//!
//! For a rate change `src -> dst` with `g = gcd(src, dst)`, output sample `j`
//! sits at input position `j * M / L` (`L = dst / g`, `M = src / g`). Its
//! fractional part is always `p / L` for an integer phase `p`, so the
//! Kaiser-windowed sinc kernel is tabulated once per phase.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{AudioClip, AudioError};

/// Zero crossings of the sinc kernel on each side of the center.
const ZERO_CROSSINGS: f64 = 16.0;
/// Cutoff as a fraction of the lower Nyquist rate.
const ROLLOFF: f64 = 0.9;
const KAISER_BETA: f64 = 8.6;
/// Above this many phases the kernel is evaluated on the fly.
const MAX_TABLE_PHASES: u64 = 2048;
/// Intervals of the Kaiser window lookup.
const WINDOW_STEPS: usize = 16384;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window `I0(beta * sqrt(1 - s)) / I0(beta)` sampled on `s = r^2`
/// in `[0, 1]`. It is a power series in `s`, so linear interpolation on
/// this grid is accurate to about 1e-7.
fn kaiser_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let norm = bessel_i0(KAISER_BETA);
        (0..=WINDOW_STEPS)
            .map(|i| {
                let s = i as f64 / WINDOW_STEPS as f64;
                bessel_i0(KAISER_BETA * (1.0 - s).sqrt()) / norm
            })
            .collect()
    })
}

fn kaiser(r: f64) -> f64 {
    let table = kaiser_table();
    let x = (r * r).min(1.0) * WINDOW_STEPS as f64;
    let i = (x as usize).min(WINDOW_STEPS - 1);
    let t = x - i as f64;
    table[i] + t * (table[i + 1] - table[i])
}

struct Kernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    half_width: f64,
    reach: i64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
        Self {
            cutoff,
            half_width,
            reach: half_width.ceil() as i64 + 1,
        }
    }

    #[cfg(test)]
    fn at(&self, d: f64) -> f64 {
        if d.abs() >= self.half_width {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * d;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        2.0 * self.cutoff * sinc * kaiser(d / self.half_width)
    }

    /// Taps for offsets `-reach..=reach` around the integer base, for a
    /// fractional position `frac` in [0, 1). Normalized to unit DC gain.
    fn taps(&self, frac: f64) -> Vec<f64> {
        // sin(pi * 2c * d) for consecutive offsets by rotating one angle
        // step at a time.
        let step = 2.0 * PI * self.cutoff;
        let (step_sin, step_cos) = step.sin_cos();
        let first = -self.reach as f64 - frac;
        let (mut sin, mut cos) = (step * first).sin_cos();
        let mut taps = Vec::with_capacity(2 * self.reach as usize + 1);
        for o in -self.reach..=self.reach {
            let d = o as f64 - frac;
            let tap = if d.abs() >= self.half_width {
                0.0
            } else if d == 0.0 {
                1.0
            } else {
                sin / (step * d) * kaiser(d / self.half_width)
            };
            taps.push(tap);
            (sin, cos) = (
                sin * step_cos + cos * step_sin,
                cos * step_cos - sin * step_sin,
            );
        }
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        taps
    }
}

/// Resamples to `target_rate`. Downsampling is anti-aliased by the kernel's
/// cutoff; a clip already at the target rate is returned unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    let src_rate = clip.sample_rate();
    if src_rate == target_rate || clip.is_empty() {
        return Ok(clip.clone().with_rate(target_rate));
    }
    let g = gcd(src_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src_rate as u64 / g;
    let n_in = clip.len() as u64;
    let n_out = ((n_in as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;

    let kernel = Kernel::new(up, down);
    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());

    let input = clip.samples();
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let pos = j as u128 * down as u128;
        let base = (pos / up as u128) as i64;
        let phase = (pos % up as u128) as u64;
        let computed;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                computed = kernel.taps(phase as f64 / up as f64);
                &computed
            }
        };
        let first = base - kernel.reach;
        let mut acc = 0.0;
        for (k, w) in taps.iter().enumerate() {
            let idx = first + k as i64;
            if idx >= 0 && (idx as u64) < n_in {
                acc += w * input[idx as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}
