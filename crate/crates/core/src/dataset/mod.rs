//! Recording ingestion and the cycle inventory.
//!
//! Recordings follow the `<patient>_<rec>_<loc>_<mode>_<device>.wav` naming
//! convention with a sibling `.txt` annotation file listing one breathing
//! cycle per line.

mod manifest;
mod split;
mod stats;
mod synth;

pub use manifest::{DatasetManifest, ManifestEntry, Recording};
pub use split::{device_subsets, patient_split, split_patients, HasMeta, SplitSpec};
pub use stats::{dataset_stats, ClassDeviceTable, LENGTH_BIN_S};
pub use synth::{
    device_coloration, generate, synth_fixture, SynthPatient, SynthRecording, SynthReport,
    SynthSpec,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, WavError};

/// Annotations may overrun the audio by up to one analysis frame
/// (256 samples at 4 kHz); such spans are clamped, longer overruns rejected.
pub const OVERRUN_TOLERANCE_S: f64 = 256.0 / 4000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad recording name `{name}`: {reason}")]
    FileName { name: String, reason: String },
    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },
    #[error("cycle {index} [{start_s}, {end_s}] s lies outside the {duration_s} s recording")]
    CycleOutside {
        index: usize,
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("need at least 2 patients to split, have {0}")]
    TooFewPatients(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("patient {0} is not in the manifest")]
    UnknownPatient(u32),
    #[error("invalid fixture spec: {0}")]
    Synth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Normal,
    Crackle,
    Wheeze,
    /// Crackle and wheeze together.
    Both,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [Self::Normal, Self::Crackle, Self::Wheeze, Self::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Crackle => "crackle",
            Self::Wheeze => "wheeze",
            Self::Both => "both",
        }
    }

    pub fn has_crackle(self) -> bool {
        matches!(self, Self::Crackle | Self::Both)
    }

    pub fn has_wheeze(self) -> bool {
        matches!(self, Self::Wheeze | Self::Both)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn label_from_flags(crackle: bool, wheeze: bool) -> ClassLabel {
    match (crackle, wheeze) {
        (false, false) => ClassLabel::Normal,
        (true, false) => ClassLabel::Crackle,
        (false, true) => ClassLabel::Wheeze,
        (true, true) => ClassLabel::Both,
    }
}

/// Recording instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    #[serde(rename = "AKGC417L")]
    Akgc417l,
    Meditron,
    Litt3200,
    #[serde(rename = "LittC2SE")]
    LittC2se,
}

impl Device {
    pub const ALL: [Device; 4] = [
        Self::Akgc417l,
        Self::Meditron,
        Self::Litt3200,
        Self::LittC2se,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Self::Akgc417l => "AKGC417L",
            Self::Meditron => "Meditron",
            Self::Litt3200 => "Litt3200",
            Self::LittC2se => "LittC2SE",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Device {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.token() == s)
            .ok_or_else(|| format!("unknown device `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: String,
    pub device: Device,
}

impl RecordingMeta {
    /// File stem in the naming convention, without extension.
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.patient_id,
            self.recording_index,
            self.chest_location,
            self.acquisition_mode,
            self.device
        )
    }
}

pub fn parse_recording_filename(name: &str) -> Result<RecordingMeta, DatasetError> {
    let err = |reason: String| DatasetError::FileName {
        name: name.to_string(),
        reason,
    };
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = base
        .strip_suffix(".wav")
        .ok_or_else(|| err("expected a .wav extension".into()))?;
    let fields: Vec<&str> = stem.split('_').collect();
    let [pid, rec, loc, mode, device] = fields[..] else {
        return Err(err(format!(
            "expected 5 underscore-separated fields, found {}",
            fields.len()
        )));
    };
    if [rec, loc, mode].iter().any(|f| f.is_empty()) {
        return Err(err("empty field".into()));
    }
    Ok(RecordingMeta {
        patient_id: pid
            .parse()
            .map_err(|_| err(format!("patient id `{pid}` is not an integer")))?,
        recording_index: rec.to_string(),
        chest_location: loc.to_string(),
        acquisition_mode: mode.to_string(),
        device: device.parse().map_err(err)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

impl CycleAnnotation {
    pub fn label(&self) -> ClassLabel {
        label_from_flags(self.crackle, self.wheeze)
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

pub fn parse_annotation_file(text: &str) -> Result<Vec<CycleAnnotation>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |reason: String| DatasetError::Annotation {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [start, end, crackle, wheeze] = fields[..] else {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        };
        let time = |s: &str, what: &str| -> Result<f64, DatasetError> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("{what} `{s}` is not a number"))),
            }
        };
        let flag = |s: &str, what: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err(format!("{what} flag `{s}` is not 0 or 1"))),
        };
        let start_s = time(start, "start")?;
        let end_s = time(end, "end")?;
        if start_s < 0.0 {
            return Err(err(format!("negative start {start_s}")));
        }
        if end_s <= start_s {
            return Err(err(format!("end {end_s} is not after start {start_s}")));
        }
        out.push(CycleAnnotation {
            start_s,
            end_s,
            crackle: flag(crackle, "crackle")?,
            wheeze: flag(wheeze, "wheeze")?,
        });
    }
    Ok(out)
}

/// Identifies a cycle by recording stem and position within the recording.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CycleId {
    pub recording: String,
    pub index: usize,
}

impl fmt::Display for CycleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.recording, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreathingCycle {
    pub clip: AudioClip,
    pub label: ClassLabel,
    pub meta: RecordingMeta,
    /// Position within the recording, in temporal order.
    pub cycle_index: usize,
}

impl BreathingCycle {
    pub fn id(&self) -> CycleId {
        CycleId {
            recording: self.meta.stem(),
            index: self.cycle_index,
        }
    }

    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }
}

/// Cuts `clip` into one cycle per annotation. Boundaries are
/// `round(t * rate)`; cycles are indexed by start time.
pub fn extract_cycles(
    clip: &AudioClip,
    annotations: &[CycleAnnotation],
    meta: &RecordingMeta,
) -> Result<Vec<BreathingCycle>, DatasetError> {
    let rate = clip.sample_rate() as f64;
    let duration = clip.duration_s();
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.sort_by(|&a, &b| annotations[a].start_s.total_cmp(&annotations[b].start_s));

    let mut out = Vec::with_capacity(annotations.len());
    for (index, &i) in order.iter().enumerate() {
        let a = annotations[i];
        let outside = || DatasetError::CycleOutside {
            index: i,
            start_s: a.start_s,
            end_s: a.end_s,
            duration_s: duration,
        };
        if a.start_s >= duration || a.end_s > duration + OVERRUN_TOLERANCE_S {
            return Err(outside());
        }
        if a.end_s > duration {
            log::warn!(
                "{}: cycle {i} ends at {} s, past the {duration} s recording; clamped",
                meta.stem(),
                a.end_s
            );
        }
        let start = ((a.start_s * rate).round() as usize).min(clip.len());
        let end = ((a.end_s * rate).round() as usize).min(clip.len());
        if end <= start {
            return Err(outside());
        }
        out.push(BreathingCycle {
            clip: clip.slice(start, end),
            label: a.label(),
            meta: meta.clone(),
            cycle_index: index,
        });
    }
    Ok(out)
}
