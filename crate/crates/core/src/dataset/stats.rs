use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClassLabel, DatasetError, DatasetManifest, Device};

/// Width of a cycle-length histogram bin, seconds.
pub const LENGTH_BIN_S: f64 = 1.0;

/// Cycle counts by class and device, with per-device patient counts and a
/// cycle-length histogram.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassDeviceTable {
    /// `counts[class][device]`.
    pub counts: [[usize; 4]; 4],
    pub patients_per_device: [usize; 4],
    pub patients: usize,
    /// `length_histogram[i]` counts cycles with duration in
    /// `[i, i + 1) * LENGTH_BIN_S`.
    pub length_histogram: Vec<usize>,
    pub total_duration_s: f64,
}

impl ClassDeviceTable {
    pub fn from_cycles<I>(cycles: I) -> Self
    where
        I: IntoIterator<Item = (ClassLabel, Device, u32, f64)>,
    {
        let mut t = Self::default();
        let mut patients: [BTreeSet<u32>; 4] = Default::default();
        let mut all = BTreeSet::new();
        for (label, device, patient, duration_s) in cycles {
            t.counts[label.index()][device.index()] += 1;
            patients[device.index()].insert(patient);
            all.insert(patient);
            let bin = (duration_s / LENGTH_BIN_S).floor().max(0.0) as usize;
            if t.length_histogram.len() <= bin {
                t.length_histogram.resize(bin + 1, 0);
            }
            t.length_histogram[bin] += 1;
            t.total_duration_s += duration_s;
        }
        t.patients_per_device = patients.map(|s| s.len());
        t.patients = all.len();
        t
    }

    pub fn class_totals(&self) -> [usize; 4] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn device_totals(&self) -> [usize; 4] {
        std::array::from_fn(|d| self.counts.iter().map(|row| row[d]).sum())
    }

    pub fn total(&self) -> usize {
        self.class_totals().iter().sum()
    }

    /// Mean cycles per patient recorded on `device`; `None` without patients.
    pub fn cycles_per_patient(&self, device: Device) -> Option<f64> {
        let p = self.patients_per_device[device.index()];
        (p > 0).then(|| self.device_totals()[device.index()] as f64 / p as f64)
    }

    pub fn mean_cycle_s(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.total_duration_s / n as f64)
    }

    /// Plain-text table: one row per device with patient count, per-class
    /// counts and total, then a totals row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<10} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "device", "patients", "N", "C", "W", "B", "total"
        )
        .unwrap();
        let dev_totals = self.device_totals();
        for d in Device::ALL {
            let i = d.index();
            writeln!(
                s,
                "{:<10} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}",
                d.token(),
                self.patients_per_device[i],
                self.counts[0][i],
                self.counts[1][i],
                self.counts[2][i],
                self.counts[3][i],
                dev_totals[i]
            )
            .unwrap();
        }
        let c = self.class_totals();
        writeln!(
            s,
            "{:<10} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "total",
            self.patients,
            c[0],
            c[1],
            c[2],
            c[3],
            self.total()
        )
        .unwrap();
        if let Some(mean) = self.mean_cycle_s() {
            writeln!(s, "mean cycle length: {mean:.2} s").unwrap();
        }
        for (i, n) in self.length_histogram.iter().enumerate() {
            let lo = i as f64 * LENGTH_BIN_S;
            writeln!(s, "  [{lo:>4.1}, {:>4.1}) s: {n}", lo + LENGTH_BIN_S).unwrap();
        }
        s
    }
}

/// Tabulates the annotation files of every manifest entry.
pub fn dataset_stats(manifest: &DatasetManifest) -> Result<ClassDeviceTable, DatasetError> {
    let mut rows = Vec::new();
    for entry in &manifest.entries {
        for a in manifest.annotations(entry)? {
            rows.push((
                a.label(),
                entry.meta.device,
                entry.meta.patient_id,
                a.duration_s(),
            ));
        }
    }
    Ok(ClassDeviceTable::from_cycles(rows))
}
