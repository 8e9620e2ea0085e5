//! Synthetic stand-in for a real auscultation corpus.
//!
//! Each cycle is band-limited breath noise under a rise-and-fall envelope.
//! Wheeze cycles add a sustained tone; crackle cycles add short decaying
//! broadband clicks; `both` cycles get both. Every device applies a fixed
//! gain and spectral coloration to its recordings, and Litt3200 removes
//! 1500-2000 Hz entirely.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{
    ClassLabel, CycleAnnotation, DatasetError, DatasetManifest, Device, ManifestEntry,
    RecordingMeta,
};
use crate::audio::{quantize_i16, write_wav, AudioClip};
use crate::rng::{self, Rng};

const LOCATIONS: [&str; 7] = ["Al", "Ar", "Pl", "Pr", "Tc", "Ll", "Lr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPatient {
    pub id: u32,
    pub device: Device,
    pub recordings: usize,
    /// Cycles per class, indexed like `ClassLabel::ALL`.
    pub classes: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sample_rate: u32,
    /// Cycle durations are uniform in `[min, max]` seconds.
    pub cycle_s: [f64; 2],
    pub wheeze_hz: f64,
    pub patients: Vec<SynthPatient>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::uniform(8, 10, &Device::ALL)
    }
}

/// `n` split as evenly as possible over four classes, the remainder going
/// to classes starting at `offset`.
fn balanced(n: usize, offset: usize) -> [usize; 4] {
    let mut c = [n / 4; 4];
    for j in 0..n % 4 {
        c[(offset + j) % 4] += 1;
    }
    c
}

impl SynthSpec {
    /// `n_patients` with ids from 101, devices assigned round-robin from
    /// `devices`, class counts balanced per patient, two recordings each.
    pub fn uniform(n_patients: usize, cycles_per_patient: usize, devices: &[Device]) -> Self {
        let patients = (0..n_patients)
            .map(|i| SynthPatient {
                id: 101 + i as u32,
                device: devices[i % devices.len()],
                recordings: 2.min(cycles_per_patient.max(1)),
                classes: balanced(cycles_per_patient, i),
            })
            .collect();
        Self {
            sample_rate: 4000,
            cycle_s: [1.5, 3.5],
            wheeze_hz: 400.0,
            patients,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Synth(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        let [lo, hi] = self.cycle_s;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("cycle_s [{lo}, {hi}] must satisfy 0 < min <= max"));
        }
        if !(self.wheeze_hz > 0.0 && self.wheeze_hz < self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "wheeze_hz {} must lie below nyquist",
                self.wheeze_hz
            ));
        }
        if self.patients.is_empty() {
            return bad("no patients".into());
        }
        let mut ids: Vec<u32> = self.patients.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate patient id".into());
        }
        for p in &self.patients {
            let n: usize = p.classes.iter().sum();
            if p.recordings == 0 || n < p.recordings {
                return bad(format!(
                    "patient {} needs at least one cycle per recording ({n} cycles, {} recordings)",
                    p.id, p.recordings
                ));
            }
        }
        Ok(())
    }

    pub fn total_cycles(&self) -> usize {
        self.patients
            .iter()
            .map(|p| p.classes.iter().sum::<usize>())
            .sum()
    }
}

/// Generator bookkeeping: what was planted, for checking ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seed: u64,
    pub recordings: usize,
    pub cycles: usize,
    /// `counts[class][device]`.
    pub counts: [[usize; 4]; 4],
}

#[derive(Debug, Clone)]
pub struct SynthRecording {
    pub meta: RecordingMeta,
    pub clip: AudioClip,
    pub annotations: Vec<CycleAnnotation>,
}

fn envelope(i: usize, n: usize) -> f64 {
    (PI * (i as f64 + 0.5) / n as f64).sin()
}

/// Raised-cosine fade of `fade` samples at both ends of an `n`-sample span.
fn fade(i: usize, n: usize, fade: usize) -> f64 {
    let d = i.min(n - 1 - i);
    if d >= fade {
        1.0
    } else {
        0.5 - 0.5 * (PI * d as f64 / fade as f64).cos()
    }
}

fn cycle_audio(label: ClassLabel, n: usize, spec: &SynthSpec, rng: &mut Rng) -> Vec<f64> {
    let rate = spec.sample_rate as f64;
    // Breath: one-pole low-passed noise (corner near 230 Hz at 4 kHz).
    let alpha = (-2.0 * PI * 230.0 / rate).exp();
    let mut lp = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let w: f64 = rng.sample(StandardNormal);
            lp = alpha * lp + (1.0 - alpha) * w;
            0.35 * lp * envelope(i, n)
        })
        .collect();

    if label.has_wheeze() {
        let sustain = ((0.7 * n as f64) as usize).max(((0.1 * rate) as usize).min(n));
        let start = rng.random_range(0..=n - sustain);
        let phase = rng.random_range(0.0..2.0 * PI);
        let ramp = (0.01 * rate) as usize;
        for i in 0..sustain {
            let t = i as f64 / rate;
            out[start + i] +=
                0.2 * fade(i, sustain, ramp.max(1)) * (2.0 * PI * spec.wheeze_hz * t + phase).sin();
        }
    }

    if label.has_crackle() {
        let clicks = rng.random_range(4..=9);
        for _ in 0..clicks {
            let len = ((rng.random_range(0.005..=0.015) * rate) as usize).clamp(2, n);
            let start = rng.random_range(0..=n - len);
            let tau = len as f64 / 4.0;
            let amp = rng.random_range(0.8..1.2);
            for i in 0..len {
                let w: f64 = rng.sample(StandardNormal);
                out[start + i] += amp * w * (-(i as f64) / tau).exp();
            }
        }
    }
    out
}

/// Fixed per-device gain and spectral shaping.
pub fn device_coloration(device: Device, samples: &mut [f64], sample_rate: u32) {
    match device {
        Device::Akgc417l => {}
        Device::Meditron => {
            // Pre-emphasis tilt.
            let mut prev = 0.0;
            for x in samples.iter_mut() {
                let cur = *x;
                *x = 0.8 * (cur - 0.6 * prev);
                prev = cur;
            }
        }
        Device::Litt3200 => {
            zero_band(samples, sample_rate, 1500.0, 2000.0);
            samples.iter_mut().for_each(|x| *x *= 1.2);
        }
        Device::LittC2se => {
            // One-pole smoothing darkens the highs.
            let mut y = 0.0;
            for x in samples.iter_mut() {
                y = 0.55 * y + 0.45 * *x;
                *x = 0.9 * y;
            }
        }
    }
}

/// Removes every FFT bin of the whole signal whose frequency lies in
/// `[low_hz, high_hz]`.
pub(crate) fn zero_band(samples: &mut [f64], sample_rate: u32, low_hz: f64, high_hz: f64) {
    let n = samples.len();
    if n == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = sample_rate as f64 / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if f >= low_hz && f <= high_hz {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (x, c) in samples.iter_mut().zip(&buf) {
        *x = c.re / n as f64;
    }
}

fn split_evenly(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

/// Generates the fixture in memory. Samples are already quantized to
/// 16-bit PCM so they equal what a WAV round trip returns.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthRecording>, DatasetError> {
    spec.validate()?;
    let rate = spec.sample_rate as f64;
    let mut out = Vec::new();
    for p in &spec.patients {
        let mut labels: Vec<ClassLabel> = ClassLabel::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, p.classes[l.index()]))
            .collect();
        labels.shuffle(&mut rng::stream(seed, &[p.id as u64, u64::MAX]));

        let mut taken = 0;
        for (r, count) in split_evenly(labels.len(), p.recordings)
            .into_iter()
            .enumerate()
        {
            let mut rng = rng::stream(seed, &[p.id as u64, r as u64]);
            let meta = RecordingMeta {
                patient_id: p.id,
                recording_index: format!("{}b1", r + 1),
                chest_location: LOCATIONS[r % LOCATIONS.len()].to_string(),
                acquisition_mode: "sc".to_string(),
                device: p.device,
            };
            let mut samples = Vec::new();
            let mut annotations = Vec::with_capacity(count);
            for &label in &labels[taken..taken + count] {
                let secs = rng.random_range(spec.cycle_s[0]..=spec.cycle_s[1]);
                let n = ((secs * rate).round() as usize).max(1);
                let start = samples.len();
                samples.extend(cycle_audio(label, n, spec, &mut rng));
                annotations.push(CycleAnnotation {
                    start_s: start as f64 / rate,
                    end_s: samples.len() as f64 / rate,
                    crackle: label.has_crackle(),
                    wheeze: label.has_wheeze(),
                });
            }
            taken += count;
            device_coloration(p.device, &mut samples, spec.sample_rate);
            let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let scale = if peak > 0.95 { 0.95 / peak } else { 1.0 };
            for x in &mut samples {
                *x = quantize_i16(*x * scale) as f64 / 32768.0;
            }
            out.push(SynthRecording {
                meta,
                clip: AudioClip::new(samples, spec.sample_rate).expect("validated rate"),
                annotations,
            });
        }
    }
    Ok(out)
}

fn annotation_text(annotations: &[CycleAnnotation]) -> String {
    annotations
        .iter()
        .map(|a| {
            format!(
                "{:.5}\t{:.5}\t{}\t{}\n",
                a.start_s, a.end_s, a.crackle as u8, a.wheeze as u8
            )
        })
        .collect()
}

/// Writes the fixture to `out_dir`: one WAV and annotation file per
/// recording, `manifest.jsonl`, and `synth_report.json`.
pub fn synth_fixture(
    spec: &SynthSpec,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<(DatasetManifest, SynthReport), DatasetError> {
    let dir = out_dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let recordings = generate(spec, seed)?;
    let mut report = SynthReport {
        seed,
        recordings: recordings.len(),
        cycles: 0,
        counts: [[0; 4]; 4],
    };
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in &recordings {
        let stem = rec.meta.stem();
        let wav = format!("{stem}.wav");
        let txt = format!("{stem}.txt");
        write_wav(dir.join(&wav), &rec.clip).map_err(|source| DatasetError::Wav {
            path: dir.join(&wav),
            source,
        })?;
        fs::write(dir.join(&txt), annotation_text(&rec.annotations))
            .map_err(io(&dir.join(&txt)))?;
        for a in &rec.annotations {
            report.counts[a.label().index()][rec.meta.device.index()] += 1;
            report.cycles += 1;
        }
        entries.push(ManifestEntry {
            recording: wav.into(),
            annotation: txt.into(),
            meta: rec.meta.clone(),
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
    };
    manifest.write(dir.join("manifest.jsonl"))?;
    let report_path = dir.join("synth_report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(io(&report_path))?;
    Ok((manifest, report))
}
