#![allow(dead_code)]

use auscult_core::dataset::{generate, SynthSpec};
use auscult_core::model::ArchConfig;
use auscult_core::pipeline::{recording_cycles, CycleSet, RunConfig};

/// Conditioned cycles of a generated fixture.
pub fn synth_set(spec: &SynthSpec, seed: u64, cfg: &RunConfig) -> CycleSet {
    let mut cycles = Vec::new();
    for r in generate(spec, seed).unwrap() {
        cycles.extend(recording_cycles(&r.meta, &r.clip, &r.annotations, &cfg.preprocess).unwrap());
    }
    CycleSet::new(cycles)
}

/// Small, fast configuration for tests.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.arch = ArchConfig {
        conv_stages: vec![(4, 2), (8, 2)],
        ..ArchConfig::default()
    };
    cfg.train.target_len_s = 2.0;
    cfg.train.batch_size = 16;
    cfg.train.lr_stage1 = 0.01;
    cfg.train.lr_stage2 = 0.003;
    cfg.train.epochs_stage1 = 2;
    cfg.train.epochs_stage2 = 1;
    cfg.train.seed = seed;
    cfg
}
