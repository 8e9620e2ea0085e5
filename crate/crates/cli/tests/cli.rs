use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[arch]
conv_stages = [[4, 2], [8, 2]]
fc_widths = [32]

[train]
target_len_s = 2.0
batch_size = 8
lr_stage1 = 0.01
lr_stage2 = 0.003
epochs_stage1 = 2
epochs_stage2 = 1
"#;

fn auscult(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auscult"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = auscult(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        files.insert(
            p.strip_prefix(root).unwrap().to_path_buf(),
            std::fs::read(&p).unwrap(),
        );
    }
    files
}

fn fixture(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--patients",
        "8",
        "--cycles",
        "5",
        "--seed",
        "3",
    ]);
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    data
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&[
        "synth",
        "--out",
        s(&a),
        "--seed",
        "9",
        "--patients",
        "4",
        "--cycles",
        "3",
    ]);
    ok(&[
        "synth",
        "--out",
        s(&b),
        "--seed",
        "9",
        "--patients",
        "4",
        "--cycles",
        "3",
    ]);
    ok(&[
        "synth",
        "--out",
        s(&c),
        "--seed",
        "10",
        "--patients",
        "4",
        "--cycles",
        "3",
    ]);
    let ta = tree(&a);
    assert!(ta.keys().any(|k| k.extension().is_some_and(|e| e == "wav")));
    assert_eq!(ta, tree(&b));
    assert_ne!(ta, tree(&c));
}

#[test]
fn stats_counts_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["stats", "--data", s(&data), "--json"])).unwrap();
    let total: u64 = json["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 40, "{json}");
    let text = ok(&["stats", "--data", s(&data)]);
    assert!(
        text.lines()
            .any(|l| l.starts_with("total") && l.trim_end().ends_with("40")),
        "{text}"
    );
}

#[test]
fn train_finetune_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--run",
        s(&run),
        "--seed",
        "1",
    ]);
    for f in [
        "config.toml",
        "manifest.txt",
        "split.json",
        "stage1.ckpt",
        "metrics.jsonl",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let out = ok(&["finetune", "--run", s(&run)]);
    let tuned: Vec<&str> = ["AKGC417L", "Meditron", "Litt3200", "LittC2SE"]
        .into_iter()
        .filter(|d| run.join(format!("stage2-{d}.ckpt")).is_file())
        .collect();
    assert!(!tuned.is_empty());
    for d in &tuned {
        assert!(out.contains(d), "{out}");
    }
    assert_eq!(
        std::fs::read_to_string(run.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2 + tuned.len()
    );

    let first = ok(&["evaluate", "--run", s(&run)]);
    assert!(
        first.contains("4class") && first.contains("2class"),
        "{first}"
    );
    assert!(first.contains("+FT"), "{first}");
    let report = std::fs::read(run.join("report.json")).unwrap();
    ok(&["evaluate", "--run", s(&run), "--workers", "3"]);
    assert_eq!(std::fs::read(run.join("report.json")).unwrap(), report);
    assert_eq!(
        ok(&["report", "--run", s(&run)]),
        std::fs::read_to_string(run.join("report.txt")).unwrap()
    );

    let stage1 = ok(&[
        "evaluate",
        "--run",
        s(&run),
        "--stage1-only",
        "--task",
        "4class",
    ]);
    assert!(
        !stage1.contains("+FT") && !stage1.contains("2class"),
        "{stage1}"
    );
    assert_eq!(
        auscult(&["evaluate", "--run", s(&run), "--task", "3class"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--run",
        s(&a),
    ]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--run",
        s(&b),
    ]);
    for f in ["stage1.ckpt", "metrics.jsonl", "split.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_snapshot_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--run",
        s(&run),
        "--epochs",
        "1",
    ]);
    let snapshot = run.join("config.toml");
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&snapshot), "--run", s(&again)]);
    assert_eq!(
        std::fs::read(snapshot).unwrap(),
        std::fs::read(again.join("config.toml")).unwrap()
    );
}

#[test]
fn split_and_preprocess_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let split = dir.path().join("split.json");
    ok(&[
        "split",
        "--data",
        s(&data),
        "--out",
        s(&split),
        "--ratio",
        "0.75",
        "--seed",
        "4",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&split).unwrap()).unwrap();
    assert_eq!(json["train_patients"].as_array().unwrap().len(), 6);
    assert_eq!(json["test_patients"].as_array().unwrap().len(), 2);

    let out = dir.path().join("grids");
    let cfg = dir.path().join("tiny.toml");
    ok(&[
        "preprocess",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--pgm",
    ]);
    let files = tree(&out);
    assert_eq!(
        files
            .keys()
            .filter(|k| k.extension().is_some_and(|e| e == "grid"))
            .count(),
        40
    );
    assert_eq!(
        files
            .keys()
            .filter(|k| k.extension().is_some_and(|e| e == "pgm"))
            .count(),
        40
    );
}

#[test]
fn sweep_writes_one_row_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let run = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--run",
        s(&run),
        "--lengths",
        "1,2,3",
        "--epochs",
        "1",
    ]);
    let table = std::fs::read_to_string(run.join("sweep.txt")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    let rows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let run = dir.path().join("run");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = 3\n").unwrap();
    let out = auscult(&[
        "train",
        "--config",
        s(&bad),
        "--data",
        s(&data),
        "--run",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    let zero = dir.path().join("zero.toml");
    std::fs::write(&zero, "[train]\nbatch_size = 0\n").unwrap();
    let out = auscult(&[
        "train",
        "--config",
        s(&zero),
        "--data",
        s(&data),
        "--run",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = auscult(&[
        "train",
        "--data",
        s(&dir.path().join("missing")),
        "--run",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[data]:"));

    let out = auscult(&["evaluate", "--run", s(&dir.path().join("no-run"))]);
    assert_eq!(out.status.code(), Some(3));

    let broken = dir.path().join("broken");
    std::fs::create_dir_all(&broken).unwrap();
    std::fs::copy(
        data.join("101_1b1_Al_sc_AKGC417L.wav"),
        broken.join("101_1b1_Al_sc_AKGC417L.wav"),
    )
    .unwrap();
    std::fs::write(broken.join("101_1b1_Al_sc_AKGC417L.txt"), "0.1 oops 0 0\n").unwrap();
    let out = auscult(&["stats", "--data", s(&broken)]);
    assert_eq!(out.status.code(), Some(3));
}
