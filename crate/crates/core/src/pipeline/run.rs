//! Dataset loading, split preparation and the run directory.
//!
//! A run directory holds `config.toml`, `manifest.txt` (the data source),
//! `split.json`, `stage1.ckpt`, `stage2-<device>.ckpt`, `metrics.jsonl` (one
//! epoch record per line) and `report.json` / `report.txt`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    audit, par_map, recording_cycles, AuditEntry, CycleSet, DeviceModelSet, EpochRecord,
    PipelineError, RunConfig,
};
use crate::dataset::{patient_split, split_patients, DatasetManifest, Device, SplitSpec};
use crate::metrics::EvalReport;
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};

const VAL_SEED_MIX: u64 = 0x5eed_0f_7a1;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Manifest named by the config (a manifest file wins over a directory).
pub fn open_manifest(cfg: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    match (&cfg.data.manifest, &cfg.data.dataset_dir) {
        (Some(m), _) => Ok(DatasetManifest::load(m)?),
        (None, Some(d)) => Ok(DatasetManifest::from_dir(d)?),
        (None, None) => Err(PipelineError::Config(
            "set data.manifest or data.dataset_dir".into(),
        )),
    }
}

/// Reads and conditions every recording of the configured dataset.
pub fn load_dataset(
    cfg: &RunConfig,
    workers: usize,
) -> Result<(DatasetManifest, CycleSet), PipelineError> {
    let manifest = open_manifest(cfg)?;
    let per_rec = par_map(&manifest.entries, workers, |_, e| {
        let rec = manifest.read_recording(e)?;
        recording_cycles(&rec.meta, &rec.clip, &rec.annotations, &cfg.preprocess)
    });
    let mut cycles = Vec::new();
    for r in per_rec {
        cycles.extend(r?);
    }
    Ok((manifest, CycleSet::new(cycles)))
}

/// Patient ids, one or more per line; blank lines and `#` comments are
/// skipped.
pub fn read_train_list(path: &Path) -> Result<BTreeSet<u32>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let mut ids = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let id = tok.parse().map_err(|_| {
                PipelineError::Config(format!(
                    "{} line {}: bad patient id `{tok}`",
                    path.display(),
                    n + 1
                ))
            })?;
            ids.insert(id);
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub spec: SplitSpec,
    pub val_patients: BTreeSet<u32>,
    pub train: CycleSet,
    pub val: CycleSet,
    pub test: CycleSet,
}

/// Train/test split from the config, then a patient-wise validation carve
/// out of the training patients. A device filter applies to all three.
pub fn prepare_splits(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    all: &CycleSet,
) -> Result<Splits, PipelineError> {
    let s = &cfg.split;
    let spec = if let Some(p) = &s.split_file {
        let text = std::fs::read_to_string(p).map_err(io(p))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
    } else if let Some(p) = &s.train_list {
        SplitSpec::from_train_list(manifest, &read_train_list(p)?)?
    } else {
        patient_split(manifest, s.ratio, s.seed)?
    };
    let inner = split_patients(
        &spec.train_patients,
        1.0 - cfg.train.val_fraction,
        spec.seed ^ VAL_SEED_MIX,
    )?;
    let val_patients = inner.test_patients;
    let device = cfg.train.device_filter;
    let pick = |ids: &BTreeSet<u32>| {
        all.filter(|c| {
            ids.contains(&c.meta.patient_id) && device.is_none_or(|d| c.meta.device == d)
        })
    };
    Ok(Splits {
        train: pick(&inner.train_patients),
        val: pick(&val_patients),
        test: pick(&spec.test_patients),
        val_patients,
        spec,
    })
}

/// Summary written at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub audit: Vec<AuditEntry>,
    pub reports: Vec<EvalReport>,
}

impl RunReport {
    pub fn new(cfg: &RunConfig, finetuned: bool, method: String, reports: Vec<EvalReport>) -> Self {
        Self {
            method,
            audit: audit(cfg, finetuned),
            reports,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            s.push_str(&r.to_table());
            s.push('\n');
        }
        s.push_str("pipeline\n");
        for a in &self.audit {
            writeln!(
                s,
                "  {:<18} {:<3} {}",
                a.stage,
                if a.active { "on" } else { "off" },
                a.detail
            )
            .expect("write to string");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(PipelineError::Io {
                path: root,
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "run directory not found",
                ),
            });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn stage2_name(device: Device) -> String {
        format!("stage2-{device}.ckpt")
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(io(&p))
    }

    fn read(&self, name: &str) -> Result<String, PipelineError> {
        let p = self.path(name);
        std::fs::read_to_string(&p).map_err(io(&p))
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<(), PipelineError> {
        self.write("config.toml", cfg.to_toml().as_bytes())
    }

    pub fn read_config(&self) -> Result<RunConfig, PipelineError> {
        RunConfig::from_toml(&self.read("config.toml")?)
    }

    pub fn write_manifest_ref(&self, cfg: &RunConfig) -> Result<(), PipelineError> {
        let src = cfg.data.manifest.as_ref().or(cfg.data.dataset_dir.as_ref());
        let text = src
            .map(|p| format!("{}\n", p.display()))
            .unwrap_or_default();
        self.write("manifest.txt", text.as_bytes())
    }

    pub fn write_split(&self, spec: &SplitSpec) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(spec).expect("split serializes") + "\n";
        self.write("split.json", json.as_bytes())
    }

    pub fn read_split(&self) -> Result<SplitSpec, PipelineError> {
        serde_json::from_str(&self.read("split.json")?)
            .map_err(|e| PipelineError::Config(format!("split.json: {e}")))
    }

    /// Appends epoch records, one JSON object per line.
    pub fn append_metrics(&self, records: &[EpochRecord]) -> Result<(), PipelineError> {
        let p = self.path("metrics.jsonl");
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(io(&p))?;
        for r in records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(f, "{line}").map_err(io(&p))?;
        }
        Ok(())
    }

    pub fn read_metrics(&self) -> Result<Vec<EpochRecord>, PipelineError> {
        self.read("metrics.jsonl")?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| PipelineError::Config(format!("metrics.jsonl: {e}")))
            })
            .collect()
    }

    pub fn save_model(
        &self,
        name: &str,
        model: &Model,
        meta: &CheckpointMeta,
    ) -> Result<(), PipelineError> {
        Ok(save_checkpoint(&self.path(name), model, meta)?)
    }

    pub fn load_model(&self, name: &str) -> Result<(Model, CheckpointMeta), PipelineError> {
        Ok(load_checkpoint(&self.path(name))?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Stage-1 model as fallback plus whatever stage-2 checkpoints exist.
    pub fn load_device_set(&self) -> Result<DeviceModelSet, PipelineError> {
        let (fallback, _) = self.load_model("stage1.ckpt")?;
        let mut set = DeviceModelSet::uniform(fallback);
        for d in Device::ALL {
            let name = Self::stage2_name(d);
            if self.has(&name) {
                set.models.insert(d, self.load_model(&name)?.0);
            }
        }
        Ok(set)
    }

    pub fn write_report(&self, report: &RunReport) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
        self.write("report.json", json.as_bytes())?;
        self.write("report.txt", report.to_text().as_bytes())
    }

    pub fn read_report(&self) -> Result<RunReport, PipelineError> {
        serde_json::from_str(&self.read("report.json")?)
            .map_err(|e| PipelineError::Config(format!("report.json: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.txt");
        std::fs::write(&p, "# header\n101 102\n\n103,104  # trailing\n").unwrap();
        assert_eq!(
            read_train_list(&p).unwrap(),
            [101, 102, 103, 104].into_iter().collect()
        );
        std::fs::write(&p, "101\nabc\n").unwrap();
        assert!(
            matches!(read_train_list(&p), Err(PipelineError::Config(m)) if m.contains("line 2"))
        );
    }

    #[test]
    fn config_snapshot_reparses_equal() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let mut cfg = RunConfig::default();
        cfg.train.seed = 77;
        cfg.train.device_filter = Some(Device::Litt3200);
        cfg.data.dataset_dir = Some("/data/icbhi".into());
        run.write_config(&cfg).unwrap();
        assert_eq!(run.read_config().unwrap(), cfg);
    }

    #[test]
    fn metrics_append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let rec = |epoch| EpochRecord {
            stage: 1,
            device: None,
            epoch,
            loss: 1.25,
            train_accuracy: 0.5,
            val_score: Some(0.4),
        };
        run.append_metrics(&[rec(1)]).unwrap();
        run.append_metrics(&[rec(2), rec(3)]).unwrap();
        assert_eq!(run.read_metrics().unwrap(), vec![rec(1), rec(2), rec(3)]);
    }
}
