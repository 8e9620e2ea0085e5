use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::audio::{FilterDesign, TARGET_RATE};
use crate::augment::{AugmentKind, AugmentParams, PadMode};
use crate::dataset::Device;
use crate::metrics::Task;
use crate::model::ArchConfig;
use crate::spectro::{BlankClipConfig, SpectrogramConfig};

/// Signal conditioning applied to every cycle before anything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub sample_rate: u32,
    pub filter: bool,
    pub filter_order: usize,
    pub band_hz: [f64; 2],
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_RATE,
            filter: true,
            filter_order: 5,
            band_hz: [50.0, 1800.0],
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn filter_design(&self) -> FilterDesign {
        FilterDesign {
            order: self.filter_order,
            low_hz: self.band_hz[0],
            high_hz: self.band_hz[1],
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub target_len_s: f64,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub momentum: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
    /// Same-class concatenation.
    pub concat_augment: bool,
    pub standard_augment: bool,
    /// Probability that each enabled augmentation fires for a drawn sample.
    pub augment_prob: f64,
    pub augment_kinds: Vec<AugmentKind>,
    /// Neighbor-aware padding; otherwise `baseline_pad` is used.
    pub smart_pad: bool,
    pub baseline_pad: PadMode,
    pub blank_clip: bool,
    pub weighted_sampling: bool,
    /// Share of training patients held out for checkpoint selection.
    pub val_fraction: f64,
    /// Restrict every split to one device.
    pub device_filter: Option<Device>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            target_len_s: 7.0,
            batch_size: 64,
            lr_stage1: 1e-3,
            lr_stage2: 1e-4,
            momentum: 0.9,
            epochs_stage1: 200,
            epochs_stage2: 50,
            seed: 0,
            concat_augment: true,
            standard_augment: true,
            augment_prob: 0.5,
            augment_kinds: AugmentKind::ALL.to_vec(),
            smart_pad: true,
            baseline_pad: PadMode::Zero,
            blank_clip: true,
            weighted_sampling: true,
            val_fraction: 0.1,
            device_filter: None,
        }
    }
}

impl TrainConfig {
    pub fn target_len(&self, sample_rate: u32) -> usize {
        (self.target_len_s * sample_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `.wav`/`.txt` pairs.
    pub dataset_dir: Option<PathBuf>,
    /// Line-delimited manifest; takes precedence over `dataset_dir`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
    /// File with one training patient id per line; overrides `ratio`.
    pub train_list: Option<PathBuf>,
    /// A saved split file; overrides both of the above.
    pub split_file: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            seed: 0,
            train_list: None,
            split_file: None,
        }
    }
}

/// Complete description of one reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub spectrogram: SpectrogramConfig,
    #[serde(default)]
    pub blank_clip: BlankClipConfig,
    #[serde(default)]
    pub augment: AugmentParams,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_task() -> Task {
    Task::FourClass
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: default_task(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            preprocess: PreprocessConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            blank_clip: BlankClipConfig::default(),
            augment: AugmentParams::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.arch
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.augment
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.spectrogram
            .validate(self.preprocess.sample_rate)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.preprocess.sample_rate == 0 {
            return bad("preprocess.sample_rate must be positive".into());
        }
        if self.preprocess.filter
            && crate::audio::design_butterworth_bandpass(self.preprocess.filter_design()).is_err()
        {
            return bad(format!(
                "filter band {:?} Hz of order {} is not realizable at {} Hz",
                self.preprocess.band_hz, self.preprocess.filter_order, self.preprocess.sample_rate
            ));
        }
        if self.arch.input_mels != self.spectrogram.n_mels {
            return bad(format!(
                "arch.input_mels ({}) must equal spectrogram.n_mels ({})",
                self.arch.input_mels, self.spectrogram.n_mels
            ));
        }
        if self.arch.n_classes == 2 && self.task == Task::FourClass {
            return bad("a 2-class model cannot be scored on the 4class task".into());
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad(format!(
                "split.ratio {} must be in (0, 1)",
                self.split.ratio
            ));
        }
        let t = &self.train;
        let window_s = self.spectrogram.window_len as f64 / self.preprocess.sample_rate as f64;
        if !(t.target_len_s.is_finite() && t.target_len_s >= window_s) {
            return bad(format!(
                "train.target_len_s must be at least one window ({window_s} s)"
            ));
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        for (name, lr) in [("lr_stage1", t.lr_stage1), ("lr_stage2", t.lr_stage2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("train.{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return bad("train.momentum must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&t.augment_prob) {
            return bad("train.augment_prob must be in [0, 1]".into());
        }
        if t.standard_augment && t.augment_kinds.is_empty() {
            return bad("train.augment_kinds is empty but standard_augment is on".into());
        }
        if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
            return bad("train.val_fraction must be in (0, 1)".into());
        }
        Ok(())
    }
}
