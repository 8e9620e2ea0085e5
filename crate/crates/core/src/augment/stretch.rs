//! Pitch-preserving time stretch (waveform-similarity overlap-add).

use crate::spectro::hann;

/// Frame length in samples at 4 kHz scale: 40 ms.
const FRAME_S: f64 = 0.04;

/// Stretches `x` to exactly `out_len` samples without changing its pitch.
///
/// Frames of a periodic Hann window are overlap-added at half-frame hop.
/// Each analysis frame is taken near its nominal position, shifted within a
/// quarter frame to best continue the previously placed frame.
pub fn time_stretch(x: &[f64], out_len: usize, sample_rate: u32) -> Vec<f64> {
    if out_len == 0 {
        return Vec::new();
    }
    let frame = (((FRAME_S * sample_rate as f64) as usize) & !1).max(4);
    if x.len() < 2 * frame {
        return linear_stretch(x, out_len);
    }
    let hop = frame / 2;
    let tol = frame / 4;
    let window = hann(frame);
    let ratio = x.len() as f64 / out_len as f64;
    let last_start = x.len() - frame;

    let mut out = vec![0.0; out_len + frame];
    let mut norm = vec![0.0; out_len + frame];
    let mut natural: Option<usize> = None;
    let mut k = 0;
    while k * hop < out_len {
        let nominal = ((k * hop) as f64 * ratio).round() as usize;
        let start = match natural {
            None => nominal.min(last_start),
            Some(nat) => {
                let lo = nominal.saturating_sub(tol).min(last_start);
                let hi = (nominal + tol).min(last_start);
                let nat = nat.min(last_start);
                let reference = &x[nat..nat + frame];
                (lo..=hi)
                    .max_by(|&a, &b| {
                        let ca = correlation(reference, &x[a..a + frame]);
                        let cb = correlation(reference, &x[b..b + frame]);
                        // Prefer the candidate nearest the nominal position on ties.
                        ca.total_cmp(&cb)
                            .then_with(|| nominal.abs_diff(b).cmp(&nominal.abs_diff(a)))
                    })
                    .unwrap_or(lo)
            }
        };
        let at = k * hop;
        for i in 0..frame {
            out[at + i] += window[i] * x[start + i];
            norm[at + i] += window[i];
        }
        natural = Some(start + hop);
        k += 1;
    }
    out.truncate(out_len);
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-6 {
            *o /= n;
        }
    }
    // The first sample has zero window weight; carry the signal's own start.
    out[0] = x[0];
    out
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linear_stretch(x: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; out_len];
    }
    if x.len() == 1 || out_len == 1 {
        return vec![x[0]; out_len];
    }
    let scale = (x.len() - 1) as f64 / (out_len - 1) as f64;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * scale;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let f = pos - i as f64;
            x[i] * (1.0 - f) + x[i + 1] * f
        })
        .collect()
}
