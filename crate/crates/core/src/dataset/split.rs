use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BreathingCycle, DatasetError, DatasetManifest, Device, ManifestEntry, RecordingMeta};
use crate::rng;

/// Patient-wise train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_patients: BTreeSet<u32>,
    pub test_patients: BTreeSet<u32>,
    pub seed: u64,
    pub ratio: f64,
}

/// Number of train-side patients: `ceil(ratio * n)`, kept within `1..n`.
fn train_count(ratio: f64, n: usize) -> usize {
    // Products like 0.7 * 10 land a hair above the integer.
    let raw = (ratio * n as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, n - 1)
}

pub fn patient_split(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<SplitSpec, DatasetError> {
    split_patients(&manifest.patients(), ratio, seed)
}

impl SplitSpec {
    /// Split with an explicit train list; every other manifest patient is
    /// test.
    pub fn from_train_list(
        manifest: &DatasetManifest,
        train: &BTreeSet<u32>,
    ) -> Result<Self, DatasetError> {
        let all = manifest.patients();
        if let Some(p) = train.iter().find(|p| !all.contains(p)) {
            return Err(DatasetError::UnknownPatient(*p));
        }
        let test: BTreeSet<u32> = all.difference(train).copied().collect();
        Ok(Self {
            ratio: train.len() as f64 / all.len().max(1) as f64,
            train_patients: train.clone(),
            test_patients: test,
            seed: 0,
        })
    }

    pub fn is_train(&self, patient: u32) -> bool {
        self.train_patients.contains(&patient)
    }

    pub fn is_test(&self, patient: u32) -> bool {
        self.test_patients.contains(&patient)
    }
}

/// Shuffles the sorted ids under `seed` and puts the first `ceil(ratio * n)`
/// on the train side.
pub fn split_patients(
    patients: &BTreeSet<u32>,
    ratio: f64,
    seed: u64,
) -> Result<SplitSpec, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    if patients.len() < 2 {
        return Err(DatasetError::TooFewPatients(patients.len()));
    }
    let mut order: Vec<u32> = patients.iter().copied().collect();
    order.shuffle(&mut rng::seeded(seed));
    let k = train_count(ratio, order.len());
    Ok(SplitSpec {
        train_patients: order[..k].iter().copied().collect(),
        test_patients: order[k..].iter().copied().collect(),
        seed,
        ratio,
    })
}

pub trait HasMeta {
    fn meta(&self) -> &RecordingMeta;
}

impl HasMeta for BreathingCycle {
    fn meta(&self) -> &RecordingMeta {
        &self.meta
    }
}

impl HasMeta for ManifestEntry {
    fn meta(&self) -> &RecordingMeta {
        &self.meta
    }
}

/// Partitions items by recording device. Every known device has a key,
/// possibly with an empty list; input order is kept within each list.
pub fn device_subsets<T: HasMeta>(items: &[T]) -> BTreeMap<Device, Vec<&T>> {
    let mut out: BTreeMap<Device, Vec<&T>> = Device::ALL.iter().map(|d| (*d, Vec::new())).collect();
    for item in items {
        out.entry(item.meta().device).or_default().push(item);
    }
    out
}
