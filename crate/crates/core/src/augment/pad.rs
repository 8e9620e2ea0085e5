//! Length standardization.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::dataset::{BreathingCycle, ClassLabel, CycleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentSource {
    Current,
    Prev,
    Next,
    Zero,
    Reflection,
}

/// Output samples `out` were copied from `source` starting at `src_start`
/// (or synthesized, for zero and reflection fill).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub source: SegmentSource,
    pub cycle: Option<CycleId>,
    pub src_start: usize,
    pub out: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedLengthSample {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: ClassLabel,
    /// Tiles `0..samples.len()` in order.
    pub provenance: Vec<Segment>,
}

impl FixedLengthSample {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    Reflect,
}

/// A neighbor may extend `current` when it carries the same label or is
/// normal.
pub fn neighbor_eligible(current: ClassLabel, neighbor: ClassLabel) -> bool {
    neighbor == current || neighbor == ClassLabel::Normal
}

struct Builder {
    samples: Vec<f64>,
    provenance: Vec<Segment>,
    target: usize,
}

impl Builder {
    fn short(&self) -> bool {
        self.samples.len() < self.target
    }

    /// Appends as much of `cycle` as fits.
    fn push(&mut self, source: SegmentSource, cycle: &BreathingCycle) {
        let take = cycle.len().min(self.target - self.samples.len());
        if take == 0 {
            return;
        }
        let start = self.samples.len();
        self.samples
            .extend_from_slice(&cycle.clip.samples()[..take]);
        self.provenance.push(Segment {
            source,
            cycle: Some(cycle.id()),
            src_start: 0,
            out: start..start + take,
        });
    }
}

/// Extends `current` to exactly `target_len` samples: first with the
/// previous cycle, then the next one, each only if eligible, then with
/// copies of `current`. Anything past `target_len` is cut off the end, so
/// the front of `current` is always kept.
pub fn smart_pad(
    current: &BreathingCycle,
    prev: Option<&BreathingCycle>,
    next: Option<&BreathingCycle>,
    target_len: usize,
) -> Result<FixedLengthSample, AugmentError> {
    if target_len < 1 {
        return Err(AugmentError::TargetLen);
    }
    if current.is_empty() {
        return Err(AugmentError::EmptyCycle);
    }
    let mut b = Builder {
        samples: Vec::with_capacity(target_len),
        provenance: Vec::new(),
        target: target_len,
    };
    b.push(SegmentSource::Current, current);
    for (source, neighbor) in [(SegmentSource::Prev, prev), (SegmentSource::Next, next)] {
        if let Some(n) = neighbor.filter(|n| neighbor_eligible(current.label, n.label)) {
            if b.short() {
                b.push(source, n);
            }
        }
    }
    while b.short() {
        b.push(SegmentSource::Current, current);
    }
    Ok(FixedLengthSample {
        samples: b.samples,
        sample_rate: current.clip.sample_rate(),
        label: current.label,
        provenance: b.provenance,
    })
}

/// Zero or reflection padding to `target_len`; longer cycles keep their
/// first `target_len` samples.
pub fn pad_baseline(
    cycle: &BreathingCycle,
    target_len: usize,
    mode: PadMode,
) -> Result<FixedLengthSample, AugmentError> {
    if target_len < 1 {
        return Err(AugmentError::TargetLen);
    }
    if cycle.is_empty() {
        return Err(AugmentError::EmptyCycle);
    }
    let src = cycle.clip.samples();
    let keep = src.len().min(target_len);
    let mut samples = src[..keep].to_vec();
    let mut provenance = vec![Segment {
        source: SegmentSource::Current,
        cycle: Some(cycle.id()),
        src_start: 0,
        out: 0..keep,
    }];
    if keep < target_len {
        let fill = match mode {
            PadMode::Zero => {
                samples.resize(target_len, 0.0);
                SegmentSource::Zero
            }
            PadMode::Reflect => {
                let n = src.len();
                // Bounce between the ends without repeating them: period 2(n-1).
                let period = (2 * (n - 1)).max(1);
                samples.extend((n..target_len).map(|i| {
                    let p = i % period;
                    src[if p < n { p } else { period - p }]
                }));
                SegmentSource::Reflection
            }
        };
        provenance.push(Segment {
            source: fill,
            cycle: None,
            src_start: 0,
            out: keep..target_len,
        });
    }
    Ok(FixedLengthSample {
        samples,
        sample_rate: cycle.clip.sample_rate(),
        label: cycle.label,
        provenance,
    })
}
