//! Challenge scoring: confusion matrices, sensitivity, specificity and
//! their mean, for the 4-class and 2-class (normal vs. abnormal) tasks.
//!
//! Class 0 is always the normal class; every other class is abnormal.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::AddAssign;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassLabel, Device};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions for {truths} labels")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("no samples")]
    Empty,
    #[error("{0} is undefined: its denominator is zero")]
    Undefined(&'static str),
    #[error("expected a {expected}x{expected} matrix, got {got}x{got}")]
    Shape { expected: usize, got: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "4class")]
    FourClass,
    #[serde(rename = "2class")]
    TwoClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Self::FourClass => 4,
            Self::TwoClass => 2,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Self::FourClass => &["normal", "crackle", "wheeze", "both"],
            Self::TwoClass => &["normal", "abnormal"],
        }
    }

    /// Class index of a 4-class label under this task.
    pub fn class_of(self, label: ClassLabel) -> usize {
        match self {
            Self::FourClass => label.index(),
            Self::TwoClass => usize::from(label != ClassLabel::Normal),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FourClass => "4class",
            Self::TwoClass => "2class",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4class" => Ok(Self::FourClass),
            "2class" => Ok(Self::TwoClass),
            _ => Err(format!("unknown task `{s}` (expected 4class or 2class)")),
        }
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let n = rows.len();
        let mut cm = Self::new(n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(MetricsError::Shape {
                    expected: n,
                    got: row.len(),
                });
            }
            cm.counts[t * n..(t + 1) * n].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn from_indices(
        n_classes: usize,
        preds: &[usize],
        truths: &[usize],
    ) -> Result<Self, MetricsError> {
        if preds.len() != truths.len() {
            return Err(MetricsError::LengthMismatch {
                preds: preds.len(),
                truths: truths.len(),
            });
        }
        if preds.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut cm = Self::new(n_classes);
        for (&p, &t) in preds.iter().zip(truths) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for index in [truth, pred] {
            if index >= self.n {
                return Err(MetricsError::ClassIndex {
                    index,
                    classes: self.n,
                });
            }
        }
        self.counts[truth * self.n + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.n).map(|t| self.row(t).to_vec()).collect()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), MetricsError> {
        if other.n != self.n {
            return Err(MetricsError::Shape {
                expected: self.n,
                got: other.n,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    /// Panics on a class-count mismatch; use [`ConfusionMatrix::merge`] to
    /// handle it.
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs).expect("confusion matrices of equal size");
    }
}

pub fn confusion(
    preds: &[ClassLabel],
    truths: &[ClassLabel],
) -> Result<ConfusionMatrix, MetricsError> {
    let p: Vec<usize> = preds.iter().map(|l| l.index()).collect();
    let t: Vec<usize> = truths.iter().map(|l| l.index()).collect();
    ConfusionMatrix::from_indices(4, &p, &t)
}

/// Correct abnormal predictions over all abnormal samples.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let hit: u64 = (1..cm.n).map(|i| cm.get(i, i)).sum();
    let all: u64 = (1..cm.n).map(|i| cm.row_total(i)).sum();
    if all == 0 {
        return Err(MetricsError::Undefined("sensitivity"));
    }
    Ok(hit as f64 / all as f64)
}

/// Correct normal predictions over all normal samples.
pub fn specificity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let all = cm.row_total(0);
    if all == 0 {
        return Err(MetricsError::Undefined("specificity"));
    }
    Ok(cm.get(0, 0) as f64 / all as f64)
}

pub fn icbhi_score(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(score_of(sensitivity(cm)?, specificity(cm)?))
}

/// Mean of sensitivity and specificity.
pub fn score_of(se: f64, sp: f64) -> f64 {
    (se + sp) / 2.0
}

/// Merges crackle, wheeze and both into a single abnormal class.
pub fn collapse_2class(cm: &ConfusionMatrix) -> Result<ConfusionMatrix, MetricsError> {
    if cm.n != 4 {
        return Err(MetricsError::Shape {
            expected: 4,
            got: cm.n,
        });
    }
    let mut out = ConfusionMatrix::new(2);
    for t in 0..4 {
        for p in 0..4 {
            let (t2, p2) = (usize::from(t > 0), usize::from(p > 0));
            out.counts[t2 * 2 + p2] += cm.get(t, p);
        }
    }
    Ok(out)
}

/// Diagonal over row total for each class with samples. Classes without
/// samples are absent.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> BTreeMap<usize, f64> {
    (0..cm.n)
        .filter_map(|c| {
            let total = cm.row_total(c);
            (total > 0).then(|| (c, cm.get(c, c) as f64 / total as f64))
        })
        .collect()
}

/// Sensitivity, specificity and score where defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub samples: u64,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub score: Option<f64>,
}

impl ScoreSet {
    pub fn of(cm: &ConfusionMatrix) -> Self {
        let se = sensitivity(cm).ok();
        let sp = specificity(cm).ok();
        Self {
            samples: cm.total(),
            se,
            sp,
            score: se.zip(sp).map(|(se, sp)| score_of(se, sp)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub scores: ScoreSet,
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: String,
    pub method: String,
    pub matrix: ConfusionMatrix,
    pub sensitivity: f64,
    pub specificity: f64,
    pub score: f64,
    pub per_device: BTreeMap<Device, DeviceReport>,
    /// Keyed by class name.
    pub per_class: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Builds the report from per-device matrices; the overall matrix is
    /// their sum. For the 2-class task 4-class matrices are collapsed and
    /// 2-class ones used as is.
    pub fn from_device_matrices(
        task: Task,
        split: impl Into<String>,
        method: impl Into<String>,
        per_device_4class: &BTreeMap<Device, ConfusionMatrix>,
    ) -> Result<Self, MetricsError> {
        let view = |cm: &ConfusionMatrix| match (task, cm.n_classes()) {
            (Task::FourClass, 4) | (Task::TwoClass, 2) => Ok(cm.clone()),
            (Task::TwoClass, 4) => collapse_2class(cm),
            (_, got) => Err(MetricsError::Shape {
                expected: task.n_classes(),
                got,
            }),
        };
        let mut matrix = ConfusionMatrix::new(task.n_classes());
        let mut per_device = BTreeMap::new();
        for (&device, cm) in per_device_4class {
            let cm = view(cm)?;
            matrix.merge(&cm)?;
            if cm.total() > 0 {
                per_device.insert(
                    device,
                    DeviceReport {
                        scores: ScoreSet::of(&cm),
                        matrix: cm,
                    },
                );
            }
        }
        if matrix.total() == 0 {
            return Err(MetricsError::Empty);
        }
        let sensitivity = sensitivity(&matrix)?;
        let specificity = specificity(&matrix)?;
        let names = task.class_names();
        Ok(Self {
            task,
            split: split.into(),
            method: method.into(),
            per_class: per_class_accuracy(&matrix)
                .into_iter()
                .map(|(c, a)| (names[c].to_string(), a))
                .collect(),
            matrix,
            sensitivity,
            specificity,
            score: score_of(sensitivity, specificity),
            per_device,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fixed-width text: a summary row in the column order split & task,
    /// method, Sp, Se, Score; then one row per device; then per-class
    /// accuracy.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let split_task = format!("{} {}", self.split, self.task);
        writeln!(
            s,
            "{:<18} {:<24} {:>7} {:>7} {:>7}",
            "split & task", "method", "Sp", "Se", "Score"
        )
        .unwrap();
        writeln!(
            s,
            "{:<18} {:<24} {:>7} {:>7} {:>7}",
            split_task,
            self.method,
            percent(self.specificity),
            percent(self.sensitivity),
            percent(self.score)
        )
        .unwrap();
        s.push('\n');
        writeln!(
            s,
            "{:<10} {:>8} {:>7} {:>7} {:>7}",
            "device", "samples", "Sp", "Se", "Score"
        )
        .unwrap();
        for (device, r) in &self.per_device {
            let p = |v: Option<f64>| v.map_or_else(|| "-".to_string(), percent);
            writeln!(
                s,
                "{:<10} {:>8} {:>7} {:>7} {:>7}",
                device.token(),
                r.scores.samples,
                p(r.scores.sp),
                p(r.scores.se),
                p(r.scores.score)
            )
            .unwrap();
        }
        s.push('\n');
        writeln!(s, "{:<10} {:>8}", "class", "accuracy").unwrap();
        for name in self.task.class_names() {
            if let Some(a) = self.per_class.get(*name) {
                writeln!(s, "{:<10} {:>8}", name, percent(*a)).unwrap();
            }
        }
        s
    }
}

/// Percentage with one decimal, rounded half-up.
pub fn percent(fraction: f64) -> String {
    // The epsilon absorbs representation error, e.g. 0.6855 * 1000 = 685.4999...
    let tenths = (fraction * 1000.0 + 0.5 + 1e-9).floor() as i64;
    format!("{}.{}%", tenths / 10, tenths % 10)
}
