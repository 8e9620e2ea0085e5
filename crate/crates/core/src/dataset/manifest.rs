use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_annotation_file, parse_recording_filename, CycleAnnotation, DatasetError, RecordingMeta,
};
use crate::audio::{read_wav, AudioClip};

/// One recording: audio path, annotation path, parsed name fields. Relative
/// paths resolve against the manifest's root directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub recording: PathBuf,
    pub annotation: PathBuf,
    pub meta: RecordingMeta,
}

/// A recording with its audio and annotations loaded.
#[derive(Debug, Clone)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub clip: AudioClip,
    pub annotations: Vec<CycleAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl DatasetManifest {
    /// Scans `dir` for `*.wav` recordings with sibling `.txt` annotations,
    /// in file-name order.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let mut names: Vec<String> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".wav"))
            .collect();
        names.sort();
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let meta = parse_recording_filename(&name)?;
            let annotation = PathBuf::from(format!("{}.txt", meta.stem()));
            if !dir.join(&annotation).is_file() {
                return Err(DatasetError::MissingFile(dir.join(annotation)));
            }
            entries.push(ManifestEntry {
                recording: PathBuf::from(name),
                annotation,
                meta,
            });
        }
        Ok(Self {
            root: dir.to_path_buf(),
            entries,
        })
    }

    pub fn from_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| DatasetError::Manifest {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Self {
            root: root.into(),
            entries,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Reads a manifest file and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::from_jsonl(&text, root)?;
        for e in &manifest.entries {
            for p in [&e.recording, &e.annotation] {
                let full = manifest.resolve(p);
                if !full.is_file() {
                    return Err(DatasetError::MissingFile(full));
                }
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn patients(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.meta.patient_id).collect()
    }

    /// Entries whose patient is in `patients`, in manifest order.
    pub fn restrict(&self, patients: &BTreeSet<u32>) -> Self {
        Self {
            root: self.root.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| patients.contains(&e.meta.patient_id))
                .cloned()
                .collect(),
        }
    }

    pub fn annotations(&self, entry: &ManifestEntry) -> Result<Vec<CycleAnnotation>, DatasetError> {
        let path = self.resolve(&entry.annotation);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_annotation_file(&text)
    }

    pub fn read_recording(&self, entry: &ManifestEntry) -> Result<Recording, DatasetError> {
        let path = self.resolve(&entry.recording);
        let clip = read_wav(&path).map_err(|source| DatasetError::Wav { path, source })?;
        Ok(Recording {
            meta: entry.meta.clone(),
            clip,
            annotations: self.annotations(entry)?,
        })
    }
}
