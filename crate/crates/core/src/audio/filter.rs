//! Butterworth band-pass design (analog prototype, low-pass to band-pass
//! transform, bilinear transform) realized as cascaded second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError};

/// One biquad, `a0` normalized to 1:
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (1.0 + z_inv * self.a[0] + z2 * self.a[1])
    }

    /// Poles of the section (roots of `z^2 + a1 z + a2`).
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDesign {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate: u32,
}

impl Default for FilterDesign {
    fn default() -> Self {
        Self {
            order: 5,
            low_hz: 50.0,
            high_hz: 1800.0,
            sample_rate: super::TARGET_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<Sos>,
    pub design: FilterDesign,
}

impl FilterCoefficients {
    /// Complex response at `hz`, evaluated section by section.
    pub fn response(&self, hz: f64) -> Complex64 {
        let w = 2.0 * PI * hz / self.design.sample_rate as f64;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, hz: f64) -> f64 {
        20.0 * self.response(hz).norm().log10()
    }

    /// True when every pole lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .all(|p| p.norm() < 1.0)
    }
}

pub fn design_butterworth_bandpass(design: FilterDesign) -> Result<FilterCoefficients, AudioError> {
    let FilterDesign {
        order,
        low_hz,
        high_hz,
        sample_rate,
    } = design;
    if order < 1 {
        return Err(AudioError::FilterOrder(order));
    }
    if sample_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(AudioError::BandEdges {
            low_hz,
            high_hz,
            nyquist_hz: nyquist,
        });
    }

    // Pre-warped analog band edges.
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low_hz / fs).tan();
    let w2 = fs2 * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // Analog Butterworth low-pass prototype poles, unit cutoff.
    let n = order as f64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        analog_poles.push(half + root);
        analog_poles.push(half - root);
    }

    // Bilinear transform. The `order` analog zeros at s = 0 land on z = 1 and
    // the `order` zeros at infinity on z = -1; the gain picks up
    // prod(fs2 - zero) / prod(fs2 - pole).
    let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
    let mut digital_poles = Vec::with_capacity(analog_poles.len());
    for p in &analog_poles {
        gain /= fs2 - p;
        digital_poles.push((fs2 + p) / (fs2 - p));
    }

    let sections = pair_poles(&digital_poles);
    let n_sections = sections.len();
    let gain = gain.re;
    let per_section = gain.abs().powf(1.0 / n_sections as f64);
    let sections = sections
        .into_iter()
        .enumerate()
        .map(|(i, [a1, a2])| {
            let g = if i == 0 {
                per_section * gain.signum()
            } else {
                per_section
            };
            // Each section carries one zero at z = 1 and one at z = -1.
            Sos {
                b: [g, 0.0, -g],
                a: [a1, a2],
            }
        })
        .collect();
    Ok(FilterCoefficients { sections, design })
}

/// Groups poles into real second-order denominators `[a1, a2]`, conjugate
/// pairs first and then real poles two at a time, ordered by increasing
/// pole radius.
fn pair_poles(poles: &[Complex64]) -> Vec<[f64; 2]> {
    const IMAG_TOL: f64 = 1e-12;
    let mut quads: Vec<(f64, [f64; 2])> = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for p in poles {
        if p.im.abs() <= IMAG_TOL * p.norm().max(1.0) {
            reals.push(p.re);
        } else if p.im > 0.0 {
            quads.push((p.norm(), [-2.0 * p.re, p.norm_sqr()]));
        }
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        match pair {
            [r1, r2] => quads.push((r1.abs().max(r2.abs()), [-(r1 + r2), r1 * r2])),
            [r] => quads.push((r.abs(), [-r, 0.0])),
            _ => unreachable!(),
        }
    }
    quads.sort_by(|a, b| a.0.total_cmp(&b.0));
    quads.into_iter().map(|(_, q)| q).collect()
}

/// Cascaded transposed direct-form II filtering with zero initial state.
pub fn apply_filter(
    coeffs: &FilterCoefficients,
    clip: &AudioClip,
) -> Result<AudioClip, AudioError> {
    if clip.sample_rate() != coeffs.design.sample_rate {
        return Err(AudioError::RateMismatch {
            filter: coeffs.design.sample_rate,
            clip: clip.sample_rate(),
        });
    }
    let mut buf = clip.samples().to_vec();
    for s in &coeffs.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for x in buf.iter_mut() {
            let input = *x;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[0] * y + z2;
            z2 = s.b[2] * input - s.a[1] * y;
            *x = y;
        }
    }
    AudioClip::new(buf, clip.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_filter() -> FilterCoefficients {
        design_butterworth_bandpass(FilterDesign::default()).unwrap()
    }

    /// Multiplies the sections into full numerator/denominator polynomials in
    /// z^-1 and evaluates them by Horner's rule: an oracle independent of the
    /// per-section evaluation in `FilterCoefficients::response`.
    fn polynomial_oracle(f: &FilterCoefficients, hz: f64) -> f64 {
        let mut num = vec![1.0];
        let mut den = vec![1.0];
        for s in &f.sections {
            num = convolve(&num, &s.b);
            den = convolve(&den, &[1.0, s.a[0], s.a[1]]);
        }
        let w = 2.0 * PI * hz / f.design.sample_rate as f64;
        let z_inv = Complex64::from_polar(1.0, -w);
        let horner = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &k| acc * z_inv + k)
        };
        (horner(&num) / horner(&den)).norm()
    }

    fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn default_design_shape() {
        let f = default_filter();
        assert_eq!(f.design.order, 5);
        assert_eq!(f.sections.len(), 5);
        assert!(f.is_stable());
    }

    #[test]
    fn stopband_and_center_against_polynomial_oracle() {
        let f = default_filter();
        let center = polynomial_oracle(&f, (50.0f64 * 1800.0).sqrt());
        let center_db = 20.0 * center.log10();
        assert!(center_db.abs() < 1.0, "center {center_db} dB");
        for hz in [1.0, 1999.0] {
            let db = 20.0 * (polynomial_oracle(&f, hz) / center).log10();
            assert!(db <= -60.0, "{hz} Hz only {db} dB down");
        }
        // The two evaluation routes agree.
        for hz in [10.0, 300.0, 1000.0, 1900.0] {
            let a = f.response(hz).norm();
            let b = polynomial_oracle(&f, hz);
            assert!((a - b).abs() <= 1e-6 * b, "{hz}: {a} vs {b}");
        }
    }

    #[test]
    fn matches_scipy_reference_magnitudes() {
        // scipy.signal.butter(5, [50, 1800], btype="band", fs=4000, output="sos")
        let reference = [
            (1.0, -170.19031943112861),
            (20.0, -40.04106929200588),
            (50.0, -3.0102999566400306),
            (300.0, -4.527289875365442e-09),
            (1800.0, -3.0102999566398525),
            (1900.0, -30.58095882038652),
        ];
        let f = default_filter();
        for (hz, db) in reference {
            assert!(
                (f.magnitude_db(hz) - db).abs() < 1e-6,
                "{hz} Hz: {} vs {db}",
                f.magnitude_db(hz)
            );
        }
    }

    #[test]
    fn dc_is_a_structural_zero() {
        for order in 1..=8 {
            let f = design_butterworth_bandpass(FilterDesign {
                order,
                low_hz: 100.0,
                high_hz: 1000.0,
                sample_rate: 4000,
            })
            .unwrap();
            assert_eq!(f.response(0.0).norm(), 0.0);
            assert!(f.is_stable(), "order {order}");
            assert!(f.magnitude_db(316.0).abs() < 1.0);
        }
    }

    #[test]
    fn invalid_designs_rejected() {
        let bad = |order, low_hz, high_hz| {
            design_butterworth_bandpass(FilterDesign {
                order,
                low_hz,
                high_hz,
                sample_rate: 4000,
            })
        };
        assert_eq!(bad(0, 50.0, 1800.0), Err(AudioError::FilterOrder(0)));
        assert!(matches!(
            bad(5, 0.0, 1800.0),
            Err(AudioError::BandEdges { .. })
        ));
        assert!(matches!(
            bad(5, 900.0, 800.0),
            Err(AudioError::BandEdges { .. })
        ));
        assert!(matches!(
            bad(5, 50.0, 2000.0),
            Err(AudioError::BandEdges { .. })
        ));
    }

    #[test]
    fn zero_in_zero_out_and_rate_check() {
        let f = default_filter();
        let silent = AudioClip::new(vec![0.0; 1000], 4000).unwrap();
        assert!(apply_filter(&f, &silent)
            .unwrap()
            .samples()
            .iter()
            .all(|&x| x == 0.0));
        let wrong = AudioClip::new(vec![0.0; 10], 8000).unwrap();
        assert_eq!(
            apply_filter(&f, &wrong),
            Err(AudioError::RateMismatch {
                filter: 4000,
                clip: 8000
            })
        );
    }

    #[test]
    fn dc_input_decays() {
        let f = default_filter();
        let ones = AudioClip::new(vec![1.0; 40000], 4000).unwrap();
        let out = apply_filter(&f, &ones).unwrap();
        assert_eq!(out.len(), 40000);
        let tail = out.samples()[36000..]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(tail < 1e-3, "tail {tail}");
    }

    #[test]
    fn impulse_response_decays() {
        let f = default_filter();
        let n = 4000;
        let mut imp = vec![0.0; 8 * n];
        imp[0] = 1.0;
        let h = apply_filter(&f, &AudioClip::new(imp, 4000).unwrap()).unwrap();
        let energy = |r: std::ops::Range<usize>| h.samples()[r].iter().map(|x| x * x).sum::<f64>();
        assert!(energy(4 * n..8 * n) < energy(0..4 * n));
    }

    proptest! {
        #[test]
        fn filtering_is_linear(
            x in proptest::collection::vec(-1.0f64..1.0, 64..512),
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = default_filter();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, _)| ((i as u64 * 31 + seed) as f64 * 0.7).sin()).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fx = apply_filter(&f, &AudioClip::new(x.clone(), 4000).unwrap()).unwrap();
            let fy = apply_filter(&f, &AudioClip::new(y, 4000).unwrap()).unwrap();
            let fm = apply_filter(&f, &AudioClip::new(mix, 4000).unwrap()).unwrap();
            let scale = fm.peak().max(1e-12);
            for ((m, p), q) in fm.samples().iter().zip(fx.samples()).zip(fy.samples()) {
                prop_assert!((m - (a * p + b * q)).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn doubling_input_doubles_output() {
        let f = default_filter();
        let x: Vec<f64> = (0..2000).map(|i| ((i * i) as f64 * 0.001).sin()).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y = apply_filter(&f, &AudioClip::new(x, 4000).unwrap()).unwrap();
        let y2 = apply_filter(&f, &AudioClip::new(x2, 4000).unwrap()).unwrap();
        for (a, b) in y.samples().iter().zip(y2.samples()) {
            assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }
}
