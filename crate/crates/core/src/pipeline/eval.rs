//! Routed evaluation and the input-length sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::train::{model_class, predict_class};
use super::{
    class_pools, par_map, sample_input, train_stage1, CycleSet, DeviceModelSet, Flow,
    PipelineError, RunConfig,
};
use crate::dataset::Device;
use crate::metrics::{percent, ConfusionMatrix, EvalReport, Task};
use crate::model::Model;

/// Which model scores which cycle.
#[derive(Debug, Clone, Copy)]
pub enum Routing<'a> {
    Single(&'a Model),
    PerDevice(&'a DeviceModelSet),
}

impl Routing<'_> {
    pub fn model_for(&self, device: Device) -> &Model {
        match self {
            Self::Single(m) => m,
            Self::PerDevice(set) => set.model_for(device),
        }
    }
}

/// Predicted class of every cycle in `set`, in the model's output space,
/// with augmentation and dropout off.
pub fn predict_cycles(
    routing: Routing<'_>,
    set: &CycleSet,
    cfg: &RunConfig,
    workers: usize,
) -> Result<Vec<usize>, PipelineError> {
    let pools = class_pools(set);
    par_map(set.cycles(), workers, |i, c| {
        let (spec, _) = sample_input(set, i, cfg, &pools, None)?;
        predict_class(routing.model_for(c.meta.device), &spec.values)
    })
    .into_iter()
    .collect()
}

/// Scores every cycle of `test` with its routed model and reports the
/// overall, per-device and per-class results for `task`.
pub fn evaluate(
    routing: Routing<'_>,
    test: &CycleSet,
    cfg: &RunConfig,
    task: Task,
    split: &str,
    method: &str,
    workers: usize,
) -> Result<EvalReport, PipelineError> {
    if test.is_empty() {
        return Err(PipelineError::EmptySplit("test"));
    }
    let preds = predict_cycles(routing, test, cfg, workers)?;
    let mut per_device: BTreeMap<Device, ConfusionMatrix> = BTreeMap::new();
    for (c, p) in test.cycles().iter().zip(preds) {
        let n = routing.model_for(c.meta.device).arch().n_classes;
        per_device
            .entry(c.meta.device)
            .or_insert_with(|| ConfusionMatrix::new(n))
            .record(model_class(c, n), p)?;
    }
    Ok(EvalReport::from_device_matrices(
        task,
        split,
        method,
        &per_device,
    )?)
}

/// Short method label in the usual ablation naming.
pub fn method_name(cfg: &RunConfig, finetuned: bool) -> String {
    let mut s = String::from("CNN");
    if cfg.train.concat_augment {
        s.push_str("+CBA");
    }
    if cfg.train.blank_clip {
        s.push_str("+BRC");
    }
    if finetuned {
        s.push_str("+FT");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length_s: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub score: f64,
    pub best_epoch: usize,
}

impl SweepRow {
    pub fn to_table(rows: &[SweepRow]) -> String {
        let mut s = format!(
            "{:>10}  {:>6}  {:>6}  {:>6}\n",
            "Length(s)", "Sp", "Se", "Score"
        );
        for r in rows {
            writeln!(
                s,
                "{:>10}  {:>6}  {:>6}  {:>6}",
                r.length_s,
                percent(r.specificity),
                percent(r.sensitivity),
                percent(r.score)
            )
            .expect("write to string");
        }
        s
    }
}

/// Stage-1 training and test evaluation once per input length, all other
/// settings and the splits fixed.
pub fn input_length_sweep(
    lengths: &[f64],
    train: &CycleSet,
    val: &CycleSet,
    test: &CycleSet,
    cfg: &RunConfig,
    workers: usize,
) -> Result<Vec<SweepRow>, PipelineError> {
    let window_s = cfg.spectrogram.window_len as f64 / cfg.preprocess.sample_rate as f64;
    if let Some(l) = lengths.iter().find(|&&l| !(l >= window_s && l.is_finite())) {
        return Err(PipelineError::Config(format!(
            "sweep length {l} s is shorter than one window ({window_s} s)"
        )));
    }
    lengths
        .iter()
        .map(|&length_s| {
            let mut c = cfg.clone();
            c.train.target_len_s = length_s;
            let s1 = train_stage1(train, val, &c, workers, &mut |_, _| Flow::Continue)?;
            let r = evaluate(
                Routing::Single(&s1.best),
                test,
                &c,
                c.task,
                "test",
                &method_name(&c, false),
                workers,
            )?;
            Ok(SweepRow {
                length_s,
                specificity: r.specificity,
                sensitivity: r.sensitivity,
                score: r.score,
                best_epoch: s1.best_epoch,
            })
        })
        .collect()
}
