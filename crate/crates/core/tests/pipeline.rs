mod common;

use std::collections::BTreeMap;

use auscult_core::dataset::{ClassLabel, Device, SynthSpec};
use auscult_core::metrics::{ConfusionMatrix, EvalReport, Task};
use auscult_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};
use auscult_core::pipeline::{
    evaluate, finetune_stage2, input_length_sweep, predict_cycles, train_stage1, CycleSet,
    DeviceModelSet, Flow, PipelineError, Routing, RunConfig, SweepRow,
};

struct Fixture {
    cfg: RunConfig,
    train: CycleSet,
    val: CycleSet,
    test: CycleSet,
}

/// 16 patients over all four devices: 12 train, 2 validation, 2 test.
fn fixture(seed: u64) -> Fixture {
    let cfg = common::tiny_config(seed);
    let set = common::synth_set(&SynthSpec::uniform(16, 6, &Device::ALL), seed, &cfg);
    Fixture {
        train: set.filter(|c| c.meta.patient_id < 113),
        val: set.filter(|c| (113..115).contains(&c.meta.patient_id)),
        test: set.filter(|c| c.meta.patient_id >= 115),
        cfg,
    }
}

fn stage1(f: &Fixture) -> Model {
    train_stage1(&f.train, &f.val, &f.cfg, 1, &mut |_, _| Flow::Continue)
        .unwrap()
        .best
}

fn report(routing: Routing<'_>, test: &CycleSet, cfg: &RunConfig) -> EvalReport {
    evaluate(routing, test, cfg, Task::FourClass, "test", "m", 1).unwrap()
}

#[test]
fn stage1_history_and_best_epoch_are_reproducible() {
    let mut f = fixture(3);
    f.cfg.train.epochs_stage1 = 4;
    let a = train_stage1(&f.train, &f.val, &f.cfg, 1, &mut |_, _| Flow::Continue).unwrap();
    let b = train_stage1(&f.train, &f.val, &f.cfg, 1, &mut |_, _| Flow::Continue).unwrap();
    assert_eq!(a.history.len(), 4);
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.best.network().params(), b.best.network().params());
    let max = a
        .history
        .iter()
        .filter_map(|r| r.val_score)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_score, Some(max));
    let first = a
        .history
        .iter()
        .position(|r| r.val_score == Some(max))
        .unwrap();
    assert_eq!(a.best_epoch, first + 1);
}

#[test]
fn observer_can_stop_early() {
    let mut f = fixture(3);
    f.cfg.train.epochs_stage1 = 5;
    let r = train_stage1(&f.train, &f.val, &f.cfg, 1, &mut |rec, _| {
        if rec.epoch == 2 {
            Flow::Stop
        } else {
            Flow::Continue
        }
    })
    .unwrap();
    assert_eq!(r.history.len(), 2);
}

#[test]
fn empty_splits_are_rejected() {
    let f = fixture(1);
    let empty = f.train.filter(|_| false);
    let err = train_stage1(&empty, &f.val, &f.cfg, 1, &mut |_, _| Flow::Continue).unwrap_err();
    assert!(matches!(err, PipelineError::EmptySplit("training")));
    let err = train_stage1(&f.train, &empty, &f.cfg, 1, &mut |_, _| Flow::Continue).unwrap_err();
    assert!(matches!(err, PipelineError::EmptySplit("validation")));
    let m = stage1(&f);
    let err = evaluate(
        Routing::Single(&m),
        &empty,
        &f.cfg,
        Task::FourClass,
        "test",
        "m",
        1,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::EmptySplit("test")));
}

#[test]
fn stage2_without_steps_clones_stage1_bitwise() {
    let mut f = fixture(5);
    let s1 = stage1(&f);
    f.cfg.train.epochs_stage2 = 0;
    let (set, history) = finetune_stage2(&s1, &f.train, &f.cfg, 1).unwrap();
    assert!(history.is_empty());
    assert_eq!(set.models.len(), 4);
    for m in set.models.values() {
        assert_eq!(m.network().params(), s1.network().params());
    }
}

#[test]
fn stage2_gives_one_distinct_model_per_device() {
    let f = fixture(5);
    let s1 = stage1(&f);
    let (set, history) = finetune_stage2(&s1, &f.train, &f.cfg, 1).unwrap();
    assert_eq!(
        set.models.keys().copied().collect::<Vec<_>>(),
        Device::ALL.to_vec()
    );
    assert_eq!(history.len(), 4 * f.cfg.train.epochs_stage2);
    let params: Vec<_> = set
        .models
        .values()
        .map(|m| m.network().params().clone())
        .collect();
    for (i, p) in params.iter().enumerate() {
        assert_ne!(p, s1.network().params());
        for q in &params[i + 1..] {
            assert_ne!(p, q);
        }
    }
    assert_eq!(set.fallback.network().params(), s1.network().params());
}

#[test]
fn stage2_is_independent_of_worker_count() {
    let f = fixture(9);
    let s1 = stage1(&f);
    let (a, ha) = finetune_stage2(&s1, &f.train, &f.cfg, 1).unwrap();
    let (b, hb) = finetune_stage2(&s1, &f.train, &f.cfg, 3).unwrap();
    assert_eq!(ha, hb);
    for d in Device::ALL {
        assert_eq!(
            a.model_for(d).network().params(),
            b.model_for(d).network().params()
        );
    }
}

#[test]
fn devices_absent_from_training_fall_back_to_stage1() {
    let f = fixture(2);
    let s1 = stage1(&f);
    let only = f.train.filter(|c| c.meta.device == Device::Meditron);
    let (set, _) = finetune_stage2(&s1, &only, &f.cfg, 1).unwrap();
    assert_eq!(
        set.models.keys().copied().collect::<Vec<_>>(),
        vec![Device::Meditron]
    );
    assert_eq!(
        set.model_for(Device::Litt3200).network().params(),
        s1.network().params()
    );
    // Every test cycle, whatever its device, still gets a prediction.
    let r = report(Routing::PerDevice(&set), &f.test, &f.cfg);
    assert_eq!(r.matrix.total(), f.test.len() as u64);
}

#[test]
fn single_model_equals_uniform_device_set() {
    let f = fixture(4);
    let s1 = stage1(&f);
    let mut set = DeviceModelSet::uniform(s1.clone());
    for d in Device::ALL {
        set.models.insert(d, s1.clone());
    }
    assert_eq!(
        report(Routing::Single(&s1), &f.test, &f.cfg),
        report(Routing::PerDevice(&set), &f.test, &f.cfg)
    );
}

#[test]
fn report_totals_match_test_class_counts() {
    let f = fixture(4);
    let s1 = stage1(&f);
    let r = report(Routing::Single(&s1), &f.test, &f.cfg);
    let counts = f.test.class_counts();
    for (k, &n) in counts.iter().enumerate() {
        assert_eq!(r.matrix.row_total(k), n as u64);
    }
    let by_device = f.test.by_device();
    for (d, dr) in &r.per_device {
        assert_eq!(dr.matrix.total(), by_device[d].len() as u64);
    }
    let two = evaluate(
        Routing::Single(&s1),
        &f.test,
        &f.cfg,
        Task::TwoClass,
        "test",
        "m",
        1,
    )
    .unwrap();
    assert_eq!(two.matrix.row_total(0), counts[0] as u64);
    assert_eq!(
        two.matrix.row_total(1),
        (counts[1] + counts[2] + counts[3]) as u64
    );
}

#[test]
fn routing_sends_each_cycle_to_its_device_model() {
    let f = fixture(6);
    let s1 = stage1(&f);
    let (set, _) = finetune_stage2(&s1, &f.train, &f.cfg, 1).unwrap();
    let routed = predict_cycles(Routing::PerDevice(&set), &f.test, &f.cfg, 1).unwrap();
    assert_eq!(routed.len(), f.test.len());
    for d in Device::ALL {
        let own = predict_cycles(Routing::Single(set.model_for(d)), &f.test, &f.cfg, 1).unwrap();
        for (i, c) in f.test.cycles().iter().enumerate() {
            if c.meta.device == d {
                assert_eq!(routed[i], own[i]);
            }
        }
    }
}

#[test]
fn planted_label_permutation_permutes_device_rows() {
    let mut f = fixture(8);
    // Neighbor eligibility depends on labels, so pad without neighbors to
    // keep the model inputs independent of the relabeling.
    f.cfg.train.smart_pad = false;
    let s1 = stage1(&f);
    let preds = predict_cycles(Routing::Single(&s1), &f.test, &f.cfg, 1).unwrap();
    let perm = [2usize, 3, 1, 0];
    let target = Device::Litt3200;
    let relabeled = CycleSet::new(
        f.test
            .cycles()
            .iter()
            .cloned()
            .map(|mut c| {
                if c.meta.device == target {
                    c.label = ClassLabel::from_index(perm[c.label.index()]).unwrap();
                }
                c
            })
            .collect(),
    );
    let mut expected: BTreeMap<Device, ConfusionMatrix> = BTreeMap::new();
    for (c, &p) in f.test.cycles().iter().zip(&preds) {
        let truth = c.label.index();
        let truth = if c.meta.device == target {
            perm[truth]
        } else {
            truth
        };
        expected
            .entry(c.meta.device)
            .or_insert_with(|| ConfusionMatrix::new(4))
            .record(truth, p)
            .unwrap();
    }
    let before = report(Routing::Single(&s1), &f.test, &f.cfg);
    let after = report(Routing::Single(&s1), &relabeled, &f.cfg);
    assert!(after.per_device.contains_key(&target));
    for (d, dr) in &after.per_device {
        assert_eq!(&dr.matrix, &expected[d], "{d}");
        if *d != target {
            assert_eq!(dr.matrix, before.per_device[d].matrix);
        }
    }
    let t = &after.per_device[&target].matrix;
    let b = &before.per_device[&target].matrix;
    for truth in 0..4 {
        assert_eq!(t.row(perm[truth]), b.row(truth));
    }
}

#[test]
fn checkpoint_round_trip_reproduces_report() {
    let f = fixture(10);
    let s1 = stage1(&f);
    let (set, _) = finetune_stage2(&s1, &f.train, &f.cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut loaded = DeviceModelSet::uniform({
        let p = dir.path().join("stage1.ckpt");
        save_checkpoint(&p, &set.fallback, &CheckpointMeta::default()).unwrap();
        load_checkpoint(&p).unwrap().0
    });
    for (d, m) in &set.models {
        let p = dir.path().join(format!("stage2-{d}.ckpt"));
        save_checkpoint(&p, m, &CheckpointMeta::default()).unwrap();
        loaded.models.insert(*d, load_checkpoint(&p).unwrap().0);
    }
    assert_eq!(
        report(Routing::PerDevice(&set), &f.test, &f.cfg),
        report(Routing::PerDevice(&loaded), &f.test, &f.cfg)
    );
}

#[test]
fn evaluation_is_independent_of_worker_count() {
    let f = fixture(11);
    let s1 = stage1(&f);
    let a = evaluate(
        Routing::Single(&s1),
        &f.test,
        &f.cfg,
        Task::FourClass,
        "test",
        "m",
        1,
    )
    .unwrap();
    let b = evaluate(
        Routing::Single(&s1),
        &f.test,
        &f.cfg,
        Task::FourClass,
        "test",
        "m",
        4,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_has_one_row_per_length_and_repeats() {
    let mut f = fixture(12);
    f.cfg.train.epochs_stage1 = 1;
    let lengths: Vec<f64> = (1..=9).map(f64::from).collect();
    let a = input_length_sweep(&lengths, &f.train, &f.val, &f.test, &f.cfg, 1).unwrap();
    assert_eq!(a.len(), 9);
    assert_eq!(a.iter().map(|r| r.length_s).collect::<Vec<_>>(), lengths);
    let b = input_length_sweep(&lengths, &f.train, &f.val, &f.test, &f.cfg, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(SweepRow::to_table(&a).lines().count(), 10);
}

#[test]
fn sweep_rejects_lengths_below_one_window() {
    let f = fixture(12);
    let err = input_length_sweep(&[2.0, 0.01], &f.train, &f.val, &f.test, &f.cfg, 1).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}
