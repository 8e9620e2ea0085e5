//! Deterministic inputs shared by the benchmarks.

use auscult_core::audio::AudioClip;
use auscult_core::spectro::Grid;

/// Breath-like test signal: a few inharmonic partials under a slow
/// amplitude swell.
pub fn signal(seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64) as usize;
    let rate = sample_rate as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let swell = 0.5 - 0.5 * (std::f64::consts::TAU * 0.25 * t).cos();
            let tone: f64 = [(180.0, 0.5), (410.0, 0.3), (1170.0, 0.1), (1730.0, 0.05)]
                .iter()
                .map(|(f, a)| a * (std::f64::consts::TAU * f * t).sin())
                .sum();
            swell * tone
        })
        .collect();
    AudioClip::new(samples, sample_rate).expect("positive rate")
}

/// `rows x cols` grid of smooth pseudo-random values in [-1, 1].
pub fn grid(rows: usize, cols: usize, seed: u64) -> Grid {
    let data = (0..rows * cols)
        .map(|i| ((i as f64 + seed as f64 * 0.37) * 0.618_033_988_7).sin())
        .collect();
    Grid::from_vec(rows, cols, data)
}
