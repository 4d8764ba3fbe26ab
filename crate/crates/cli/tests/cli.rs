//! End-to-end runs of the `replab` binary on small toy models.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use replab_cli::table::{parse_cka_matrix_values, Table};
use tempfile::TempDir;

const SMALL_CONFIG: &str = r#"{
  "dataset": {"samples_per_class": 30, "input_dim": 8},
  "width": 16,
  "block_groups": [1, 1],
  "supervised": {"epochs": 3, "batch_size": 32},
  "contrastive": {"epochs": 3, "batch_size": 16, "projection_dim": 4}
}"#;

fn replab(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replab"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

/// Trains a small model into `dir/run` and returns that directory.
fn toy_run(dir: &Path, objective: &str) -> PathBuf {
    let config = write_config(dir, SMALL_CONFIG);
    let run = dir.join(format!("run-{objective}"));
    let out = replab(&[&"toy", &config, &"--objective", &objective, &"--out-dir", &run]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    run
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&replab(&[])), 1);
    assert_eq!(code(&replab(&[&"cka", &"a.json"])), 1);
    assert_eq!(code(&replab(&[&"toy", &"--objective", &"sideways", &"--out-dir", &"x"])), 1);
    assert_eq!(code(&replab(&[&"--help"])), 0);
}

#[test]
fn missing_input_leaves_no_output() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("grid.csv");
    let svg = dir.path().join("grid.svg");
    let missing = dir.path().join("nope").join("manifest.json");
    let out = replab(&[&"cka", &missing, &missing, &"--out-csv", &csv, &"--out-svg", &svg]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!csv.exists() && !svg.exists());
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{"widht": 16}"#);
    let out = replab(&[&"toy", &config, &"--objective", &"supervised", &"--out-dir", &dir.path().join("r")]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("r").join("manifest.json").exists());
}

#[test]
fn divergence_is_an_internal_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"dataset": {"samples_per_class": 30, "input_dim": 8}, "width": 16, "block_groups": [1, 1],
            "supervised": {"epochs": 5, "learning_rate": 1e12}}"#,
    );
    let run = dir.path().join("r");
    let out = replab(&[&"toy", &config, &"--objective", &"supervised", &"--out-dir", &run]);
    assert_eq!(code(&out), 2);
    assert!(!run.join("manifest.json").exists());
}

#[test]
fn run_against_itself_has_unit_diagonal() {
    let dir = TempDir::new().unwrap();
    let run = toy_run(dir.path(), "contrastive");
    let manifest = run.join("manifest.json");
    let csv = dir.path().join("self.csv");
    let svg = dir.path().join("self.svg");
    let out = replab(&[&"cka", &manifest, &manifest, &"--out-csv", &csv, &"--out-svg", &svg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let table = Table::read(&csv).unwrap();
    let values = parse_cka_matrix_values(&table).unwrap();
    // 2 blocks give 4 taps, plus three head layers
    assert_eq!(values.len(), 7);
    for (i, row) in values.iter().enumerate() {
        assert_eq!(row.len(), 7);
        assert!((row[i] - 1.0).abs() <= 1e-9, "row {i}: {}", row[i]);
        for &v in row {
            assert!((-1e-9..=1.0 + 1e-9).contains(&v));
        }
    }
    assert_eq!(&table.header[1..], table.rows.iter().map(|r| r[0].clone()).collect::<Vec<_>>());

    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let cells = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).count();
    assert_eq!(cells, 49);

    let diag = dir.path().join("diag.csv");
    let out = replab(&[&"diagmax", &manifest, &manifest, &"--parity", &"even", &"--out-csv", &diag]);
    assert_eq!(code(&out), 0);
    let table = Table::read(&diag).unwrap();
    assert_eq!(table.header, ["layer_index", "diag", "max", "argmax"]);
    for row in &table.rows {
        assert_eq!(row[0], row[3]);
        assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn toy_outputs_feed_every_analysis() {
    let dir = TempDir::new().unwrap();
    let run = toy_run(dir.path(), "supervised");
    for name in ["manifest.json", "labels.npy", "training_log.json", "config.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let (v1, v2) = (run.join("view1/manifest.json"), run.join("view2/manifest.json"));

    let inv = dir.path().join("inv.csv");
    let out = replab(&[&"invariance", &v1, &v2, &"--out-csv", &inv]);
    assert_eq!(code(&out), 0);
    let curve = Table::read(&inv).unwrap();
    assert_eq!(curve.header, ["layer", "layer_index", "parity", "block_group", "cka"]);
    assert_eq!(curve.rows.len(), 5);
    assert!(curve.numeric_column("cka").unwrap().iter().all(|v| (0.0..=1.0 + 1e-9).contains(v)));

    let grid = dir.path().join("inv_all.csv");
    let out = replab(&[&"invariance", &v1, &v2, &"--all-pairs", &"--out-csv", &grid]);
    assert_eq!(code(&out), 0);
    let values = parse_cka_matrix_values(&Table::read(&grid).unwrap()).unwrap();
    let diagonal: Vec<f64> = (0..values.len()).map(|i| values[i][i]).collect();
    for (a, b) in diagonal.iter().zip(curve.numeric_column("cka").unwrap()) {
        assert!((a - b).abs() <= 1e-11);
    }

    let labels = run.join("labels.npy");
    let manifest = run.join("manifest.json");
    let cls = dir.path().join("cls.csv");
    assert_eq!(code(&replab(&[&"classsim", &manifest, &labels, &"--out-csv", &cls])), 0);
    assert_eq!(Table::read(&cls).unwrap().rows.len(), 5);

    let probe = dir.path().join("probe.csv");
    let out = replab(&[&"probe", &manifest, &labels, &"--split-seed", &"3", &"--out-csv", &probe]);
    assert_eq!(code(&out), 0);
    let table = Table::read(&probe).unwrap();
    for acc in table.numeric_column("test_accuracy").unwrap() {
        assert!((0.0..=1.0).contains(&acc));
    }

    // labels for a different sample count are rejected before anything is written
    let bad = dir.path().join("bad.csv");
    let short = dir.path().join("short.npy");
    write_short_labels(&short);
    assert_eq!(code(&replab(&[&"probe", &manifest, &short, &"--out-csv", &bad])), 1);
    assert!(!bad.exists());
}

fn write_short_labels(path: &Path) {
    let labels = replab::LabelMatrix::from_indices(&[0, 1, 0, 1], 2).unwrap();
    replab::ingest::write_labels(&labels, path).unwrap();
}

#[test]
fn toy_runs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = toy_run(&dir.path().join("a"), "contrastive");
    let b = toy_run(&dir.path().join("b"), "contrastive");
    for entry in std::fs::read_dir(&a).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            let name = entry.file_name();
            assert_eq!(std::fs::read(entry.path()).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
}

#[test]
fn replicate_overwrites_its_outputs_identically() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("rep");
    let first = replab(&[&"replicate", &"--config", &config, &"--out-dir", &out_dir]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let report = std::fs::read(out_dir.join("report.json")).unwrap();
    let grid = std::fs::read(out_dir.join("cka_supervised_s0_vs_s1_even.csv")).unwrap();

    let second = replab(&[&"replicate", &"--config", &config, &"--out-dir", &out_dir]);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read(out_dir.join("report.json")).unwrap(), report);
    assert_eq!(std::fs::read(out_dir.join("cka_supervised_s0_vs_s1_even.csv")).unwrap(), grid);

    let text = String::from_utf8(first.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 5);
    let leftovers: Vec<_> = walk(&out_dir)
        .into_iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}
