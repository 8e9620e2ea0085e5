//! End-to-end orchestration: conditioning, sample assembly, two-stage
//! training, routed evaluation and run directories.

mod config;
mod eval;
mod par;
mod run;
mod train;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, PreprocessConfig, RunConfig, SplitConfig, TrainConfig};
pub use eval::{evaluate, input_length_sweep, method_name, predict_cycles, Routing, SweepRow};
pub use par::par_map;
pub use run::{
    load_dataset, open_manifest, prepare_splits, read_train_list, RunDir, RunReport, Splits,
};
pub use train::{finetune_stage2, train_stage1, DeviceModelSet, EpochRecord, Flow, StageOneResult};

use crate::audio::{
    apply_filter, design_butterworth_bandpass, normalize, resample, AudioClip, AudioError,
};
use crate::augment::{
    concat_augment, pad_baseline, smart_pad, standard_augment, AugmentError, FixedLengthSample,
};
use crate::dataset::{
    extract_cycles, BreathingCycle, ClassLabel, CycleAnnotation, DatasetError, Device,
    RecordingMeta,
};
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::rng::Rng;
use crate::spectro::{blank_region_clip, mel_spectrogram, MelSpectrogram, SpectroError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectro(#[from] SpectroError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0} set is empty")]
    EmptySplit(&'static str),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Cycles together with their temporal neighbors within each recording.
#[derive(Debug, Clone, Default)]
pub struct CycleSet {
    cycles: Vec<BreathingCycle>,
    prev: Vec<Option<usize>>,
    next: Vec<Option<usize>>,
}

impl CycleSet {
    /// Neighbors are the cycles with adjacent `cycle_index` in the same
    /// recording.
    pub fn new(cycles: Vec<BreathingCycle>) -> Self {
        let mut by_key: BTreeMap<(String, usize), usize> = BTreeMap::new();
        for (i, c) in cycles.iter().enumerate() {
            by_key.insert((c.meta.stem(), c.cycle_index), i);
        }
        let find = |c: &BreathingCycle, idx: Option<usize>| {
            idx.and_then(|k| by_key.get(&(c.meta.stem(), k)).copied())
        };
        let prev = cycles
            .iter()
            .map(|c| find(c, c.cycle_index.checked_sub(1)))
            .collect();
        let next = cycles
            .iter()
            .map(|c| find(c, c.cycle_index.checked_add(1)))
            .collect();
        Self { cycles, prev, next }
    }

    pub fn cycles(&self) -> &[BreathingCycle] {
        &self.cycles
    }

    pub fn get(&self, i: usize) -> &BreathingCycle {
        &self.cycles[i]
    }

    pub fn prev(&self, i: usize) -> Option<&BreathingCycle> {
        self.prev[i].map(|j| &self.cycles[j])
    }

    pub fn next(&self, i: usize) -> Option<&BreathingCycle> {
        self.next[i].map(|j| &self.cycles[j])
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn filter(&self, keep: impl Fn(&BreathingCycle) -> bool) -> Self {
        Self::new(self.cycles.iter().filter(|c| keep(c)).cloned().collect())
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.cycles.iter().map(|c| c.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut n = [0; 4];
        for c in &self.cycles {
            n[c.label.index()] += 1;
        }
        n
    }

    /// Cycles per device, keyed by every device.
    pub fn by_device(&self) -> BTreeMap<Device, CycleSet> {
        Device::ALL
            .iter()
            .map(|&d| (d, self.filter(|c| c.meta.device == d)))
            .collect()
    }
}

/// Resample, band-pass and peak-normalize one clip.
pub fn condition(clip: &AudioClip, cfg: &PreprocessConfig) -> Result<AudioClip, PipelineError> {
    let mut out = if clip.sample_rate() == cfg.sample_rate {
        clip.clone()
    } else {
        resample(clip, cfg.sample_rate)?
    };
    if cfg.filter {
        out = apply_filter(&design_butterworth_bandpass(cfg.filter_design())?, &out)?;
    }
    if cfg.normalize {
        out = normalize(&out);
    }
    Ok(out)
}

/// Cuts a recording into cycles and conditions each cycle.
pub fn recording_cycles(
    meta: &RecordingMeta,
    clip: &AudioClip,
    annotations: &[CycleAnnotation],
    cfg: &PreprocessConfig,
) -> Result<Vec<BreathingCycle>, PipelineError> {
    extract_cycles(clip, annotations, meta)?
        .into_iter()
        .map(|c| {
            Ok(BreathingCycle {
                clip: condition(&c.clip, cfg)?,
                ..c
            })
        })
        .collect()
}

/// How one training or evaluation sample was put together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    /// Pool indices joined by concatenation, if it fired.
    pub concat: Option<[usize; 2]>,
    pub standard: Option<String>,
    pub padded: FixedLengthSampleSummary,
    pub mel_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLengthSampleSummary {
    pub len: usize,
    pub segments: Vec<String>,
}

impl From<&FixedLengthSample> for FixedLengthSampleSummary {
    fn from(s: &FixedLengthSample) -> Self {
        Self {
            len: s.len(),
            segments: s
                .provenance
                .iter()
                .map(|seg| {
                    format!("{:?}[{}..{}]", seg.source, seg.out.start, seg.out.end).to_lowercase()
                })
                .collect(),
        }
    }
}

/// Same-class index pools for concatenation.
pub fn class_pools(set: &CycleSet) -> [Vec<usize>; 4] {
    let mut pools: [Vec<usize>; 4] = Default::default();
    for (i, c) in set.cycles().iter().enumerate() {
        pools[c.label.index()].push(i);
    }
    pools
}

/// Model input for cycle `i` of `set`. With `rng` set, the training-time
/// augmentations are applied as configured; without it the result is
/// deterministic.
pub fn sample_input(
    set: &CycleSet,
    i: usize,
    cfg: &RunConfig,
    pools: &[Vec<usize>; 4],
    rng: Option<&mut Rng>,
) -> Result<(MelSpectrogram, SampleTrace), PipelineError> {
    let t = &cfg.train;
    let mut cycle = set.get(i).clone();
    let (mut prev, mut next) = (set.prev(i), set.next(i));
    let mut concat = None;
    let mut standard = None;
    if let Some(rng) = rng {
        if t.concat_augment && rng.random::<f64>() < t.augment_prob {
            let pool: Vec<&BreathingCycle> = pools[cycle.label.index()]
                .iter()
                .map(|&j| set.get(j))
                .collect();
            let c = concat_augment(&pool, rng)?;
            concat = Some(c.sources.map(|k| pools[cycle.label.index()][k]));
            cycle = c.cycle;
            // A joined cycle has no single temporal context.
            prev = None;
            next = None;
        }
        if t.standard_augment && rng.random::<f64>() < t.augment_prob {
            let kind = t.augment_kinds[rng.random_range(0..t.augment_kinds.len())];
            cycle = standard_augment(&cycle, &cfg.augment, kind, rng)?;
            standard = Some(kind.to_string());
        }
    }
    let padded = pad(&cycle, prev, next, cfg)?;
    let spec = to_mel(&padded, cfg)?;
    let trace = SampleTrace {
        concat,
        standard,
        padded: (&padded).into(),
        mel_rows: spec.n_rows(),
    };
    Ok((spec, trace))
}

fn pad(
    cycle: &BreathingCycle,
    prev: Option<&BreathingCycle>,
    next: Option<&BreathingCycle>,
    cfg: &RunConfig,
) -> Result<FixedLengthSample, PipelineError> {
    let target = cfg.train.target_len(cycle.clip.sample_rate());
    Ok(if cfg.train.smart_pad {
        smart_pad(cycle, prev, next, target)?
    } else {
        pad_baseline(cycle, target, cfg.train.baseline_pad)?
    })
}

fn to_mel(padded: &FixedLengthSample, cfg: &RunConfig) -> Result<MelSpectrogram, PipelineError> {
    let clip = AudioClip::new(padded.samples.clone(), padded.sample_rate)?;
    let spec = mel_spectrogram(&clip, &cfg.spectrogram)?;
    Ok(if cfg.train.blank_clip {
        blank_region_clip(&spec, &cfg.blank_clip)
    } else {
        spec
    })
}

/// Full per-cycle path from a raw cycle: conditioning of the cycle and its
/// neighbors, optional augmentation (when `rng` is given), padding, mel
/// spectrogram and optional blank-region clipping. Concatenation draws from
/// the cycle itself, the only same-class material at hand.
pub fn preprocess_cycle(
    cycle: &BreathingCycle,
    prev: Option<&BreathingCycle>,
    next: Option<&BreathingCycle>,
    cfg: &RunConfig,
    rng: Option<&mut Rng>,
) -> Result<MelSpectrogram, PipelineError> {
    let cond = |c: &BreathingCycle| -> Result<BreathingCycle, PipelineError> {
        Ok(BreathingCycle {
            clip: condition(&c.clip, &cfg.preprocess)?,
            ..c.clone()
        })
    };
    let mut cycles = vec![cond(cycle)?];
    cycles.extend(prev.map(cond).transpose()?);
    cycles.extend(next.map(cond).transpose()?);
    let set = CycleSet::new(cycles);
    let mut pools: [Vec<usize>; 4] = Default::default();
    pools[cycle.label.index()].push(0);
    Ok(sample_input(&set, 0, cfg, &pools, rng)?.0)
}

/// One pipeline stage and whether, and how, it is active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: String,
    pub active: bool,
    pub detail: String,
}

/// Stage-by-stage account of what a configuration does, in pipeline order.
pub fn audit(cfg: &RunConfig, finetuned: bool) -> Vec<AuditEntry> {
    let p = &cfg.preprocess;
    let t = &cfg.train;
    let s = &cfg.spectrogram;
    let e = |stage: &str, active: bool, detail: String| AuditEntry {
        stage: stage.into(),
        active,
        detail,
    };
    let kinds: Vec<String> = t.augment_kinds.iter().map(ToString::to_string).collect();
    vec![
        e("resample", true, format!("{} Hz", p.sample_rate)),
        e(
            "bandpass",
            p.filter,
            format!(
                "order {} {}-{} Hz",
                p.filter_order, p.band_hz[0], p.band_hz[1]
            ),
        ),
        e("normalize", p.normalize, "peak".into()),
        e(
            "concat_augment",
            t.concat_augment,
            format!("p={}", t.augment_prob),
        ),
        e(
            "standard_augment",
            t.standard_augment,
            format!("p={} kinds={}", t.augment_prob, kinds.join(",")),
        ),
        e(
            "pad",
            true,
            if t.smart_pad {
                format!("smart {} s", t.target_len_s)
            } else {
                format!("{:?} {} s", t.baseline_pad, t.target_len_s).to_lowercase()
            },
        ),
        e(
            "mel",
            true,
            format!(
                "{} mels {}-{} Hz window {} hop {}",
                s.n_mels, s.fmin, s.fmax, s.window_len, s.hop_len
            ),
        ),
        e(
            "blank_region_clip",
            t.blank_clip,
            format!(
                "margin {} dB, protect <= {} Hz",
                cfg.blank_clip.floor_margin_db, cfg.blank_clip.protect_below_hz
            ),
        ),
        e(
            "weighted_sampling",
            t.weighted_sampling,
            "class-balanced".into(),
        ),
        e(
            "finetune",
            finetuned,
            format!("{} epochs at lr {}", t.epochs_stage2, t.lr_stage2),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_recording_filename;
    use crate::rng::seeded;

    fn cycle(name: &str, index: usize, label: ClassLabel, len: usize, hz: f64) -> BreathingCycle {
        let samples = (0..len)
            .map(|i| 0.5 * (i as f64 * hz * std::f64::consts::TAU / 4000.0).sin())
            .collect();
        BreathingCycle {
            clip: AudioClip::new(samples, 4000).unwrap(),
            label,
            meta: parse_recording_filename(name).unwrap(),
            cycle_index: index,
        }
    }

    fn quick_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.train.blank_clip = false;
        cfg
    }

    #[test]
    fn neighbors_stay_within_recordings() {
        let a = "101_1b1_Al_sc_Meditron.wav";
        let b = "102_1b1_Al_sc_Meditron.wav";
        let set = CycleSet::new(vec![
            cycle(a, 1, ClassLabel::Normal, 10, 100.0),
            cycle(b, 0, ClassLabel::Normal, 10, 100.0),
            cycle(a, 0, ClassLabel::Normal, 10, 100.0),
            cycle(a, 2, ClassLabel::Normal, 10, 100.0),
        ]);
        assert_eq!(set.prev(0).unwrap().cycle_index, 0);
        assert_eq!(set.next(0).unwrap().cycle_index, 2);
        assert!(set.prev(1).is_none() && set.next(1).is_none());
        assert!(set.prev(2).is_none());
        assert!(set.next(3).is_none());
    }

    #[test]
    fn three_second_cycle_to_seven_second_grid() {
        // 28000 samples give 1 + (28000 - 256) / 128 = 217 frames.
        let c = cycle(
            "101_1b1_Al_sc_Meditron.wav",
            0,
            ClassLabel::Normal,
            12000,
            300.0,
        );
        let g = preprocess_cycle(&c, None, None, &quick_cfg(), None).unwrap();
        assert_eq!((g.n_rows(), g.n_frames()), (64, 217));
    }

    #[test]
    fn deterministic_without_augmentation() {
        let c = cycle(
            "101_1b1_Al_sc_Meditron.wav",
            0,
            ClassLabel::Crackle,
            9000,
            250.0,
        );
        let n = cycle(
            "101_1b1_Al_sc_Meditron.wav",
            1,
            ClassLabel::Normal,
            7000,
            500.0,
        );
        let cfg = RunConfig::default();
        let a = preprocess_cycle(&c, None, Some(&n), &cfg, None).unwrap();
        let b = preprocess_cycle(&c, None, Some(&n), &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn silent_band_is_clipped() {
        // Content only up to ~1 kHz; the band-pass and mel range leave the
        // rows above 1500 Hz near the floor once the gap is true silence.
        let mut cfg = RunConfig::default();
        cfg.preprocess.filter = false;
        cfg.train.target_len_s = 2.0;
        let c = cycle(
            "101_1b1_Al_sc_Litt3200.wav",
            0,
            ClassLabel::Normal,
            8000,
            500.0,
        );
        let g = preprocess_cycle(&c, None, None, &cfg, None).unwrap();
        assert!(g.n_rows() < 64);
        cfg.train.blank_clip = false;
        assert_eq!(
            preprocess_cycle(&c, None, None, &cfg, None)
                .unwrap()
                .n_rows(),
            64
        );
    }

    #[test]
    fn augmentation_is_reproducible_and_traced() {
        let rec = "101_1b1_Al_sc_Meditron.wav";
        let set = CycleSet::new(
            (0..6)
                .map(|i| cycle(rec, i, ClassLabel::Wheeze, 3000 + 500 * i, 400.0))
                .collect(),
        );
        let pools = class_pools(&set);
        let mut cfg = RunConfig::default();
        cfg.train.augment_prob = 1.0;
        cfg.train.target_len_s = 2.0;
        let (a, ta) = sample_input(&set, 2, &cfg, &pools, Some(&mut seeded(3))).unwrap();
        let (b, tb) = sample_input(&set, 2, &cfg, &pools, Some(&mut seeded(3))).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.concat.is_some() && ta.standard.is_some());
        // Concatenated samples never pull in neighbors.
        assert!(ta.padded.segments.iter().all(|s| s.starts_with("current")));
    }

    #[test]
    fn audit_flags_change_only_their_stage() {
        let base = RunConfig::default();
        let flips: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
            (
                "concat_augment",
                Box::new(|c| c.train.concat_augment = false),
            ),
            (
                "standard_augment",
                Box::new(|c| c.train.standard_augment = false),
            ),
            ("pad", Box::new(|c| c.train.smart_pad = false)),
            (
                "blank_region_clip",
                Box::new(|c| c.train.blank_clip = false),
            ),
            (
                "weighted_sampling",
                Box::new(|c| c.train.weighted_sampling = false),
            ),
            ("bandpass", Box::new(|c| c.preprocess.filter = false)),
        ];
        let a = audit(&base, true);
        for (stage, f) in flips {
            let mut cfg = base.clone();
            f(&mut cfg);
            let b = audit(&cfg, true);
            let changed: Vec<&str> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.stage.as_str())
                .collect();
            assert_eq!(changed, vec![stage]);
        }
        let changed: Vec<String> = a
            .iter()
            .zip(audit(&base, false))
            .filter(|(x, y)| *x != y)
            .map(|(x, _)| x.stage.clone())
            .collect();
        assert_eq!(changed, vec!["finetune"]);
    }
}
