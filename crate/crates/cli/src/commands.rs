use std::fs;
use std::path::{Path, PathBuf};

use auscult_core::dataset::{
    dataset_stats, patient_split, synth_fixture, DatasetError, DatasetManifest, Device, SplitSpec,
    SynthSpec,
};
use auscult_core::metrics::Task;
use auscult_core::model::{CheckpointMeta, ModelError};
use auscult_core::pipeline::{
    class_pools, evaluate, finetune_stage2, input_length_sweep, load_dataset, method_name, par_map,
    prepare_splits, read_train_list, sample_input, train_stage1, Flow, PipelineError, Routing,
    RunConfig, RunDir, RunReport, Splits, SweepRow,
};
use auscult_core::spectro::{write_grid, write_pgm};

use crate::{CommonArgs, DataArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Runtime,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Data => "data",
            Self::Runtime => "runtime",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Config => 2,
            Self::Data => 3,
            Self::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Config(_) => Kind::Config,
            PipelineError::Dataset(DatasetError::InvalidRatio(_) | DatasetError::Synth(_)) => {
                Kind::Config
            }
            PipelineError::Dataset(_) | PipelineError::Io { .. } | PipelineError::EmptySplit(_) => {
                Kind::Data
            }
            PipelineError::Model(ModelError::Checkpoint(_) | ModelError::Io(_)) => Kind::Data,
            _ => Kind::Runtime,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        PipelineError::from(e).into()
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::new(Kind::Data, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::new(Kind::Data, format!("{}: {e}", path.display())))
}

fn manifest_of(data: &DataArgs) -> Result<DatasetManifest> {
    match (&data.manifest, &data.data) {
        (Some(m), _) => Ok(DatasetManifest::load(m)?),
        (None, Some(d)) => Ok(DatasetManifest::from_dir(d)?),
        (None, None) => Err(CliError::new(
            Kind::Config,
            "pass --data DIR or --manifest FILE",
        )),
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn build_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data.data {
        cfg.data.dataset_dir = Some(d.clone());
        cfg.data.manifest = None;
    }
    if let Some(m) = &common.data.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.split.seed = seed;
    }
    Ok(cfg)
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Config snapshot of `run` pinned to the split saved there.
fn run_config(run: &RunDir) -> Result<RunConfig> {
    let mut cfg = run.read_config()?;
    cfg.split.split_file = Some(run.path("split.json"));
    Ok(cfg)
}

fn load_splits(cfg: &RunConfig, workers: usize) -> Result<Splits> {
    let (manifest, all) = load_dataset(cfg, workers)?;
    let splits = prepare_splits(cfg, &manifest, &all)?;
    log::info!(
        "{} train / {} val / {} test cycles",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(splits)
}

pub fn run(cmd: crate::Command) -> Result<()> {
    use crate::Command as C;
    match cmd {
        C::Stats { data, json } => stats(&data, json),
        C::Split {
            data,
            ratio,
            seed,
            train_list,
            out,
        } => split(&data, ratio, seed, train_list.as_deref(), &out),
        C::Synth {
            seed,
            out,
            spec,
            patients,
            cycles,
        } => synth(seed, &out, spec.as_deref(), patients, cycles),
        C::Preprocess { common, out, pgm } => preprocess(&common, &out, pgm),
        C::Train {
            common,
            run,
            epochs,
            target_len,
        } => train(&common, &run, epochs, target_len),
        C::Finetune {
            run,
            epochs,
            workers,
        } => finetune(&run, epochs, workers),
        C::Evaluate {
            run,
            task,
            stage1_only,
            workers,
        } => evaluate_run(&run, task.as_deref(), stage1_only, workers),
        C::Sweep {
            common,
            run,
            lengths,
            epochs,
        } => sweep(&common, &run, &lengths, epochs),
        C::Report { run, json } => report(&run, json),
    }
}

fn stats(data: &DataArgs, json: bool) -> Result<()> {
    let table = dataset_stats(&manifest_of(data)?)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&table).expect("table serializes")
        );
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

fn split(
    data: &DataArgs,
    ratio: f64,
    seed: u64,
    train_list: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let manifest = manifest_of(data)?;
    let spec = match train_list {
        Some(p) => SplitSpec::from_train_list(&manifest, &read_train_list(p)?)?,
        None => patient_split(&manifest, ratio, seed)?,
    };
    write_file(
        out,
        serde_json::to_string_pretty(&spec).expect("split serializes") + "\n",
    )?;
    println!(
        "{} train patients, {} test patients -> {}",
        spec.train_patients.len(),
        spec.test_patients.len(),
        out.display()
    );
    Ok(())
}

fn synth(seed: u64, out: &Path, spec: Option<&Path>, patients: usize, cycles: usize) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::new(Kind::Config, format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(Kind::Config, format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::uniform(patients, cycles, &Device::ALL),
    };
    let (manifest, report) = synth_fixture(&spec, seed, out)?;
    println!(
        "{} recordings, {} cycles -> {}",
        manifest.entries.len(),
        report.cycles,
        out.display()
    );
    Ok(())
}

fn preprocess(common: &CommonArgs, out: &Path, pgm: bool) -> Result<()> {
    let cfg = validated(build_config(common)?)?;
    let (_, set) = load_dataset(&cfg, common.workers)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::new(Kind::Data, format!("{}: {e}", out.display())))?;
    let pools = class_pools(&set);
    let lines = par_map(set.cycles(), common.workers, |i, c| -> Result<String> {
        let (spec, _) = sample_input(&set, i, &cfg, &pools, None)?;
        let name = format!("{}_c{}", c.meta.stem(), c.cycle_index);
        let grid = out.join(format!("{name}.grid"));
        let io = |e: auscult_core::spectro::GridIoError| CliError::new(Kind::Data, e.to_string());
        write_grid(&grid, &spec).map_err(io)?;
        if pgm {
            write_pgm(out.join(format!("{name}.pgm")), &spec).map_err(io)?;
        }
        Ok(serde_json::json!({
            "cycle": c.id().to_string(),
            "label": c.label,
            "device": c.meta.device,
            "rows": spec.n_rows(),
            "frames": spec.n_frames(),
            "file": format!("{name}.grid"),
        })
        .to_string())
    });
    let mut index = String::new();
    for l in lines {
        index.push_str(&l?);
        index.push('\n');
    }
    write_file(&out.join("index.jsonl"), index)?;
    println!("{} grids -> {}", set.len(), out.display());
    Ok(())
}

fn train(
    common: &CommonArgs,
    run_path: &Path,
    epochs: Option<usize>,
    target_len: Option<f64>,
) -> Result<()> {
    let mut cfg = build_config(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs_stage1 = e;
    }
    if let Some(t) = target_len {
        cfg.train.target_len_s = t;
    }
    let cfg = validated(cfg)?;
    let splits = load_splits(&cfg, common.workers)?;
    let run = RunDir::create(run_path)?;
    run.write_config(&cfg)?;
    run.write_manifest_ref(&cfg)?;
    run.write_split(&splits.spec)?;
    for name in ["metrics.jsonl", "report.json", "report.txt"]
        .into_iter()
        .map(String::from)
        .chain(Device::ALL.iter().map(|&d| RunDir::stage2_name(d)))
    {
        let _ = fs::remove_file(run.path(&name));
    }
    let result = train_stage1(
        &splits.train,
        &splits.val,
        &cfg,
        common.workers,
        &mut |_, _| Flow::Continue,
    )?;
    run.append_metrics(&result.history)?;
    let meta = CheckpointMeta {
        stage: 1,
        epoch: result.best_epoch,
        seed: cfg.train.seed,
        device: None,
        val_score: result.best_score,
    };
    run.save_model("stage1.ckpt", &result.best, &meta)?;
    println!(
        "stage 1: best epoch {} of {}, validation score {} -> {}",
        result.best_epoch,
        result.history.len(),
        result
            .best_score
            .map_or("undefined".to_string(), |s| format!("{s:.4}")),
        run.path("stage1.ckpt").display()
    );
    Ok(())
}

fn finetune(run_path: &Path, epochs: Option<usize>, workers: usize) -> Result<()> {
    let run = RunDir::open(run_path)?;
    let mut cfg = run_config(&run)?;
    if let Some(e) = epochs {
        cfg.train.epochs_stage2 = e;
        let mut snapshot = run.read_config()?;
        snapshot.train.epochs_stage2 = e;
        run.write_config(&snapshot)?;
    }
    let (stage1, _) = run.load_model("stage1.ckpt")?;
    let splits = load_splits(&cfg, workers)?;
    let (set, history) = finetune_stage2(&stage1, &splits.train, &cfg, workers)?;
    run.append_metrics(&history)?;
    for (device, model) in &set.models {
        let meta = CheckpointMeta {
            stage: 2,
            epoch: cfg.train.epochs_stage2,
            seed: cfg.train.seed,
            device: Some(device.to_string()),
            val_score: None,
        };
        run.save_model(&RunDir::stage2_name(*device), model, &meta)?;
    }
    let devices: Vec<String> = set.models.keys().map(ToString::to_string).collect();
    println!(
        "stage 2: fine-tuned {}",
        if devices.is_empty() {
            "no devices".into()
        } else {
            devices.join(", ")
        }
    );
    Ok(())
}

fn evaluate_run(
    run_path: &Path,
    task: Option<&str>,
    stage1_only: bool,
    workers: usize,
) -> Result<()> {
    let run = RunDir::open(run_path)?;
    let cfg = run_config(&run)?;
    let tasks = match task {
        Some(t) => vec![t
            .parse::<Task>()
            .map_err(|e| CliError::new(Kind::Config, e))?],
        None if cfg.arch.n_classes == 2 => vec![Task::TwoClass],
        None => vec![Task::FourClass, Task::TwoClass],
    };
    if cfg.arch.n_classes == 2 && tasks.contains(&Task::FourClass) {
        return Err(CliError::new(
            Kind::Config,
            "a 2-class model cannot be scored on the 4class task",
        ));
    }
    let models = run.load_device_set()?;
    let finetuned = !stage1_only && !models.models.is_empty();
    let routing = if finetuned {
        Routing::PerDevice(&models)
    } else {
        Routing::Single(&models.fallback)
    };
    let splits = load_splits(&cfg, workers)?;
    let method = method_name(&cfg, finetuned);
    let split_name = format!(
        "{:.0}/{:.0}",
        splits.spec.ratio * 100.0,
        (1.0 - splits.spec.ratio) * 100.0
    );
    let reports = tasks
        .into_iter()
        .map(|t| {
            evaluate(
                routing,
                &splits.test,
                &cfg,
                t,
                &split_name,
                &method,
                workers,
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let report = RunReport::new(&cfg, finetuned, method, reports);
    run.write_report(&report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn sweep(
    common: &CommonArgs,
    run_path: &Path,
    lengths: &[f64],
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = build_config(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs_stage1 = e;
    }
    let cfg = validated(cfg)?;
    let splits = load_splits(&cfg, common.workers)?;
    let run = RunDir::create(run_path)?;
    run.write_config(&cfg)?;
    run.write_manifest_ref(&cfg)?;
    run.write_split(&splits.spec)?;
    let rows = input_length_sweep(
        lengths,
        &splits.train,
        &splits.val,
        &splits.test,
        &cfg,
        common.workers,
    )?;
    let table = SweepRow::to_table(&rows);
    write_file(&run.path("sweep.txt"), &table)?;
    write_file(
        &run.path("sweep.json"),
        serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
    )?;
    print!("{table}");
    Ok(())
}

fn report(run_path: &Path, json: bool) -> Result<()> {
    let run = RunDir::open(PathBuf::from(run_path))?;
    let report = run.read_report()?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}
