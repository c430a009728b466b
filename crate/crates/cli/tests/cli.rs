use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spt_core::nn::load_checkpoint;
use spt_core::DatasetManifest;
use tempfile::TempDir;

fn spt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spt"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = spt(args);
    assert!(
        out.status.success(),
        "spt {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Six participants, one sample per class, session 1.
fn small_dataset() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "simulate",
        "--out",
        arg(&data),
        "--participants",
        "6",
        "--per-class",
        "1",
        "--seed",
        "3",
    ]);
    (dir, data.join("manifest.json"))
}

/// Parses a CSV of numbers into rows.
fn read_grid(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_writes_every_sample_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "simulate",
        "--out",
        arg(&data),
        "--participants",
        "3",
        "--per-class",
        "2",
        "--session",
        "both",
        "--class-mode",
        "5",
    ]);
    let samples = fs::read_dir(&data)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "uwbf")
        })
        .count();
    assert_eq!(samples, 3 * 2 * 5 * 2);
    let manifest = DatasetManifest::load(&data.join("manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), samples);
    let sessions: std::collections::BTreeSet<u8> =
        manifest.entries.iter().map(|e| e.session).collect();
    assert_eq!(sessions.into_iter().collect::<Vec<_>>(), vec![1, 2]);
    let loaded = manifest.load_samples(&data).unwrap();
    assert!(loaded
        .iter()
        .all(|s| s.frames.matrix().shape() == (180, 160)));
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    assert_eq!(spt(&["--help"]).status.code(), Some(0));
    assert_eq!(spt(&[]).status.code(), Some(1));
    assert_eq!(spt(&["eval", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("out");
    assert_eq!(
        spt(&["eval", "--manifest", arg(&missing), "--out", arg(&out)])
            .status
            .code(),
        Some(2)
    );
    let (_d, manifest) = small_dataset();
    let bad_partition = spt(&[
        "eval",
        "--manifest",
        arg(&manifest),
        "--out",
        arg(&out),
        "--partition",
        "4,1",
    ]);
    assert_eq!(bad_partition.status.code(), Some(1));
    // Six participants cannot fill the default 18/4/4 partition.
    assert_eq!(
        spt(&["eval", "--manifest", arg(&manifest), "--out", arg(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn featurize_writes_both_views_at_their_shapes() {
    let (dir, manifest) = small_dataset();
    let wrtft = dir.path().join("w.csv");
    let td = dir.path().join("t.csv");
    ok(&[
        "featurize",
        "--manifest",
        arg(&manifest),
        "--index",
        "2",
        "--out",
        arg(&wrtft),
    ]);
    ok(&[
        "featurize",
        "--manifest",
        arg(&manifest),
        "--index",
        "2",
        "--view",
        "td",
        "--out",
        arg(&td),
    ]);
    let w = read_grid(&wrtft);
    assert_eq!((w.len(), w[0].len()), (33, 33));
    let t = read_grid(&td);
    assert_eq!((t.len(), t[0].len()), (40, 159));
    // Standardised images have zero mean.
    let mean = t.iter().flatten().sum::<f64>() / (40.0 * 159.0);
    assert!(mean.abs() < 1e-9);
}

#[test]
fn augment_preview_writes_original_and_fifteen_combos() {
    let (dir, manifest) = small_dataset();
    let out = dir.path().join("aug");
    ok(&[
        "augment-preview",
        "--manifest",
        arg(&manifest),
        "--out",
        arg(&out),
    ]);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 16);
    assert_eq!(names[0], "combo_01_TS.csv");
    assert!(names.contains(&"combo_15_TS-RS-TW-MW.csv".to_string()));
    assert!(names.contains(&"original.csv".to_string()));
    let grid = read_grid(&out.join("combo_15_TS-RS-TW-MW.csv"));
    assert_eq!((grid.len(), grid[0].len()), (40, 160));
}

#[test]
fn train_saves_a_loadable_checkpoint_and_history() {
    let (dir, manifest) = small_dataset();
    let out = dir.path().join("model");
    ok(&[
        "train",
        "--manifest",
        arg(&manifest),
        "--out",
        arg(&out),
        "--partition",
        "4,1,1",
        "--max-epochs",
        "2",
        "--aug",
        "off",
    ]);
    let model = load_checkpoint(&out.join("model.spnw")).unwrap();
    assert!(!model.params().is_empty());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_acc");
    assert_eq!(lines.len(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "SPN");
    assert_eq!(summary["epochs"], 2);
}

#[test]
fn eval_reports_all_six_methods_and_report_reexports_them() {
    let (dir, manifest) = small_dataset();
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--manifest",
        arg(&manifest),
        "--out",
        arg(&out),
        "--partition",
        "4,1,1",
        "--repeats",
        "2",
        "--runs",
        "1",
        "--max-epochs",
        "1",
    ]);
    assert!(stdout.contains("\"command\": \"eval\""));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let methods: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        methods,
        [
            "AUG-SPN",
            "AUG-TD-CNN",
            "AUG-WRTFT-CNN",
            "SPN",
            "TD-CNN",
            "WRTFT-CNN"
        ]
    );
    for m in &methods {
        assert!(out.join(format!("confusion_{m}.csv")).exists());
    }
    let again = dir.path().join("again");
    ok(&[
        "report",
        "--input",
        arg(&out.join("report.json")),
        "--out",
        arg(&again),
    ]);
    assert_eq!(
        fs::read_to_string(again.join("summary.csv")).unwrap(),
        summary
    );

    let plain = dir.path().join("plain");
    ok(&[
        "eval",
        "--manifest",
        arg(&manifest),
        "--out",
        arg(&plain),
        "--partition",
        "4,1,1",
        "--repeats",
        "1",
        "--runs",
        "1",
        "--max-epochs",
        "1",
        "--aug",
        "off",
        "--methods",
        "spn+aug,wrtft",
    ]);
    let rows = fs::read_to_string(plain.join("summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("WRTFT-CNN,unseen,"));
}

#[test]
fn echoed_config_replays_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let stdout = ok(&[
        "simulate",
        "--out",
        arg(&first),
        "--participants",
        "3",
        "--per-class",
        "1",
        "--seed",
        "9",
    ]);
    let mut config: serde_json::Value = serde_json::Deserializer::from_str(&stdout)
        .into_iter()
        .next()
        .unwrap()
        .unwrap();
    let second = dir.path().join("second");
    config["out"] = serde_json::Value::String(arg(&second).to_string());
    let replay = dir.path().join("config.json");
    fs::write(&replay, config.to_string()).unwrap();
    ok(&["--config", arg(&replay)]);
    for entry in fs::read_dir(&first).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
