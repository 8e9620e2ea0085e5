//! Stage-1 training on all devices and stage-2 per-device fine-tuning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{class_pools, par_map, sample_input, CycleSet, PipelineError, RunConfig};
use crate::augment::{class_weights, weighted_sample};
use crate::dataset::{BreathingCycle, Device};
use crate::metrics::{collapse_2class, icbhi_score, ConfusionMatrix, Task};
use crate::model::{build_model, Batch, Model};
use crate::rng;
use crate::spectro::Grid;

const STAGE1_TAG: u64 = 1;
const STAGE2_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub device: Option<Device>,
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's draws.
    pub loss: f64,
    /// Accuracy on the epoch's (augmented, dropout-on) draws.
    pub train_accuracy: f64,
    pub val_score: Option<f64>,
}

/// Observer verdict after each stage-1 epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct StageOneResult {
    /// Weights of the epoch with the highest validation score; the earliest
    /// such epoch on ties.
    pub best: Model,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Per-device models with the stage-1 model as fallback.
#[derive(Debug, Clone)]
pub struct DeviceModelSet {
    pub fallback: Model,
    pub models: BTreeMap<Device, Model>,
}

impl DeviceModelSet {
    /// Every device routed to `model`.
    pub fn uniform(model: Model) -> Self {
        Self {
            fallback: model,
            models: BTreeMap::new(),
        }
    }

    pub fn model_for(&self, device: Device) -> &Model {
        self.models.get(&device).unwrap_or(&self.fallback)
    }
}

/// Class index of a cycle in the model's output space.
pub(crate) fn model_class(cycle: &BreathingCycle, n_classes: usize) -> usize {
    if n_classes == 2 {
        Task::TwoClass.class_of(cycle.label)
    } else {
        cycle.label.index()
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

pub(crate) fn predict_class(model: &Model, grid: &Grid) -> Result<usize, PipelineError> {
    Ok(argmax(&model.predict(grid)?))
}

/// Validation score of `model` on precomputed grids, or `None` when the
/// set lacks the classes the score needs.
fn val_score(
    model: &Model,
    grids: &[(Grid, usize)],
    task: Task,
    workers: usize,
) -> Result<Option<f64>, PipelineError> {
    let n = model.arch().n_classes;
    let preds = par_map(grids, workers, |_, (g, _)| predict_class(model, g));
    let mut cm = ConfusionMatrix::new(n);
    for (p, (_, t)) in preds.into_iter().zip(grids) {
        cm.record(*t, p?)?;
    }
    let cm = if task == Task::TwoClass && n == 4 {
        collapse_2class(&cm)?
    } else {
        cm
    };
    Ok(icbhi_score(&cm).ok())
}

fn eval_grids(
    set: &CycleSet,
    cfg: &RunConfig,
    workers: usize,
) -> Result<Vec<(Grid, usize)>, PipelineError> {
    let pools = class_pools(set);
    let n = cfg.arch.n_classes;
    par_map(set.cycles(), workers, |i, c| {
        Ok((
            sample_input(set, i, cfg, &pools, None)?.0.values,
            model_class(c, n),
        ))
    })
    .into_iter()
    .collect()
}

struct EpochStats {
    loss: f64,
    accuracy: f64,
}

/// One epoch: as many draws as the set has cycles, in minibatches.
fn run_epoch(
    model: &mut Model,
    set: &CycleSet,
    cfg: &RunConfig,
    lr: f64,
    tags: [u64; 3],
    workers: usize,
) -> Result<EpochStats, PipelineError> {
    let t = &cfg.train;
    let n_classes = model.arch().n_classes;
    let classes: Vec<usize> = set
        .cycles()
        .iter()
        .map(|c| model_class(c, n_classes))
        .collect();
    let mut order_rng = rng::stream(t.seed, &[tags[0], tags[1], tags[2], 0]);
    let draws = if t.weighted_sampling {
        weighted_sample(&class_weights(&classes)?, &mut order_rng, set.len())
    } else {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut order_rng);
        idx
    };
    let pools = class_pools(set);
    let (mut loss_sum, mut hits) = (0.0, 0usize);
    for (b, chunk) in draws.chunks(t.batch_size).enumerate() {
        let base = b * t.batch_size;
        let inputs = par_map(chunk, workers, |j, &i| {
            let mut r = rng::stream(t.seed, &[tags[0], tags[1], tags[2], 1, (base + j) as u64]);
            sample_input(set, i, cfg, &pools, Some(&mut r)).map(|(s, _)| s.values)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
        let g = model.backward(&Batch::new(inputs, labels.clone())?)?;
        model.sgd_step(&g.grads, lr, t.momentum)?;
        loss_sum += g.loss * chunk.len() as f64;
        hits += g
            .probs
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| argmax(p) == y)
            .count();
    }
    Ok(EpochStats {
        loss: loss_sum / draws.len() as f64,
        accuracy: hits as f64 / draws.len() as f64,
    })
}

/// Trains a fresh model for `epochs_stage1` epochs at `lr_stage1`,
/// scoring `val` after every epoch and keeping the best weights. The
/// observer sees each epoch's record and the current weights and may stop
/// training early.
pub fn train_stage1(
    train: &CycleSet,
    val: &CycleSet,
    cfg: &RunConfig,
    workers: usize,
    observer: &mut dyn FnMut(&EpochRecord, &Model) -> Flow,
) -> Result<StageOneResult, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(PipelineError::EmptySplit("validation"));
    }
    let t = &cfg.train;
    let mut model = build_model(&cfg.arch, t.seed)?;
    let val_grids = eval_grids(val, cfg, workers)?;
    let mut best: Option<(Model, usize, Option<f64>)> = None;
    let mut history = Vec::with_capacity(t.epochs_stage1);
    for epoch in 1..=t.epochs_stage1 {
        let stats = run_epoch(
            &mut model,
            train,
            cfg,
            t.lr_stage1,
            [STAGE1_TAG, 0, epoch as u64],
            workers,
        )?;
        let score = val_score(&model, &val_grids, cfg.task, workers)?;
        let rec = EpochRecord {
            stage: 1,
            device: None,
            epoch,
            loss: stats.loss,
            train_accuracy: stats.accuracy,
            val_score: score,
        };
        log::info!(
            "stage 1 epoch {epoch}: loss {:.4} acc {:.3} val {:?}",
            rec.loss,
            rec.train_accuracy,
            rec.val_score
        );
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((model.clone(), epoch, score));
        }
        let flow = observer(&rec, &model);
        history.push(rec);
        if flow == Flow::Stop {
            break;
        }
    }
    let (best, best_epoch, best_score) = best.unwrap_or_else(|| (model, 0, None));
    Ok(StageOneResult {
        best,
        best_epoch,
        best_score,
        history,
    })
}

/// Clones `stage1` once per device present in `train` and fine-tunes each
/// clone on that device's cycles for `epochs_stage2` epochs at
/// `lr_stage2`. Devices without training cycles use `stage1`. Clones start
/// with zero velocity and their own dropout stream; up to `workers` devices
/// train at once.
pub fn finetune_stage2(
    stage1: &Model,
    train: &CycleSet,
    cfg: &RunConfig,
    workers: usize,
) -> Result<(DeviceModelSet, Vec<EpochRecord>), PipelineError> {
    let t = &cfg.train;
    let subsets: Vec<(Device, CycleSet)> = train
        .by_device()
        .into_iter()
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let results = par_map(&subsets, workers, |_, (device, set)| {
        let mut model = stage1.clone();
        model.reset_velocity();
        model.reseed_dropout(t.seed, STAGE2_TAG << 8 | device.index() as u64);
        let mut history = Vec::with_capacity(t.epochs_stage2);
        for epoch in 1..=t.epochs_stage2 {
            let tags = [STAGE2_TAG, 1 + device.index() as u64, epoch as u64];
            let stats = run_epoch(&mut model, set, cfg, t.lr_stage2, tags, 1)?;
            log::info!(
                "stage 2 {device} epoch {epoch}: loss {:.4} acc {:.3}",
                stats.loss,
                stats.accuracy
            );
            history.push(EpochRecord {
                stage: 2,
                device: Some(*device),
                epoch,
                loss: stats.loss,
                train_accuracy: stats.accuracy,
                val_score: None,
            });
        }
        Ok::<_, PipelineError>((*device, model, history))
    });
    let mut set = DeviceModelSet::uniform(stage1.clone());
    let mut history = Vec::new();
    for r in results {
        let (device, model, h) = r?;
        set.models.insert(device, model);
        history.extend(h);
    }
    Ok((set, history))
}
