//! Black-box tests of the command-line binary: exit codes, emitted files,
//! and reproducibility of the echoed configuration.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sortnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary did not launch")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).to_lowercase().contains("usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--does-not-exist"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn surface_emits_two_parseable_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "surface",
        "--out",
        dir.path().to_str().unwrap(),
        "--extent",
        "2.0",
        "--step",
        "0.05",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    for name in ["surface_first_order.csv", "surface_second_order.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,value", "{name} header");
        assert_eq!(lines.len(), 1 + 81 * 81, "{name} row count");
    }

    // Parse both back and re-check the dominance split on the real files.
    let parse = |name: &str| -> Vec<(f64, f64, f64)> {
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
                (c[0], c[1], c[2])
            })
            .collect()
    };
    let first = parse("surface_first_order.csv");
    let second = parse("surface_second_order.csv");
    let mut saw_origin = false;
    for ((x, y, v1), (x2, y2, v2)) in first.iter().zip(&second) {
        assert_eq!((x, y), (x2, y2));
        saw_origin |= *x == 0.0 && *y == 0.0;
        if *x <= 0.0 || *y <= 0.0 {
            assert_eq!(v1, v2, "file surfaces differ on closed quadrant at ({x},{y})");
        } else {
            assert!(v2 > v1, "no dominance at ({x},{y})");
        }
    }
    assert!(saw_origin, "grid written to disk never hit (0,0) exactly");
}

#[test]
fn gradcheck_fusion_scope_passes_quickly() {
    let out = run(&["gradcheck", "--scope", "fusion", "--instances", "5"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("pass"), "no pass lines in: {text}");
    assert!(!text.contains("FAIL"), "failures in: {text}");
}

#[test]
fn tiny_training_run_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--net",
        "mlp",
        "--hidden",
        "8",
        "--data",
        "blobs",
        "--sections",
        "0.05:30",
        "--batch",
        "16",
        "--seeds",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    for f in ["config.txt", "network.txt", "run_seed1.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("run_seed1.csv")).unwrap();
    assert!(csv.starts_with("iter,split,loss,error_pct,elapsed_s"));
    assert!(csv.lines().count() > 30, "expected per-iteration rows");
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("seed 1"), "summary: {summary}");
}

#[test]
fn config_echo_reproduces_the_training_trajectory() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();

    let out = run(&[
        "train",
        "--net",
        "mlp",
        "--hidden",
        "6",
        "--data",
        "xor",
        "--sections",
        "0.05:25",
        "--batch",
        "16",
        "--seeds",
        "2",
        "--out",
        dir_a.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let out = run(&[
        "train",
        "--config",
        dir_a.path().join("config.txt").to_str().unwrap(),
        "--out",
        dir_b.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    // Same trajectory bit for bit; only the wall-clock column may differ.
    let strip_elapsed = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(
        strip_elapsed(&dir_a.path().join("run_seed2.csv")),
        strip_elapsed(&dir_b.path().join("run_seed2.csv")),
        "echoed config did not reproduce the run"
    );
}

#[test]
fn divergence_fails_the_run_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let diverging = [
        "train",
        "--net",
        "mlp",
        "--hidden",
        "8",
        "--data",
        "blobs",
        "--sections",
        "1e9:20",
        "--batch",
        "16",
        "--seeds",
        "1",
    ];

    let mut args = diverging.to_vec();
    let p1 = dir.path().join("strict");
    args.extend(["--out", p1.to_str().unwrap()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1), "divergence must exit 1");

    let mut args = diverging.to_vec();
    let p2 = dir.path().join("allowed");
    args.extend(["--allow-diverge", "--out", p2.to_str().unwrap()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "allow-diverge must exit 0: {}", stderr(&out));
    let summary = std::fs::read_to_string(p2.join("summary.txt")).unwrap();
    assert!(summary.contains("diverged"), "summary must flag divergence: {summary}");
}

#[test]
fn missing_image_dataset_names_the_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "train",
            "--net",
            "lenet-star",
            "--data",
            "cifar10",
            "--out",
            dir.path().join("r").to_str().unwrap(),
        ])
        .env("SORTNET_DATA_DIR", dir.path().join("nothing-here"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("SORTNET_DATA_DIR"),
        "error must say how to point at the data: {err}"
    );
}

#[test]
fn bench_prints_a_ratio_line() {
    let out = run(&[
        "bench",
        "--block",
        "residual",
        "--channels",
        "4",
        "--hw",
        "8",
        "--batch",
        "4",
        "--reps",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("sort/base"), "stdout: {}", stdout(&out));
}

#[test]
fn ablation_writes_the_seven_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ablate",
        "--net",
        "mlp",
        "--hidden",
        "4",
        "--data",
        "blobs",
        "--sections",
        "0.05:5",
        "--batch",
        "16",
        "--seeds",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    // MLPs have no fusion blocks to ablate; this must be a clean config
    // error, not a silent 7-row table of identical runs.
    if out.status.code() == Some(0) {
        let table = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
        for label in ["sum", "max", "prod", "sum+prod"] {
            assert!(table.contains(label), "missing row {label}: {table}");
        }
    } else {
        assert_eq!(out.status.code(), Some(1));
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn ablation_on_a_branched_net_reports_every_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ablate",
        "--net",
        "lenet-star",
        "--data",
        "synth-images",
        "--subset",
        "60",
        "--sections",
        "0.01:4",
        "--batch",
        "20",
        "--seeds",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    let labels = ["sum", "max", "prod", "sum+max", "sum+prod", "max+prod", "sum+max+prod"];
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| {
            labels.contains(&l.split_whitespace().next().unwrap_or(""))
        })
        .collect();
    assert_eq!(rows.len(), 7, "expected 7 ablation rows:\n{table}");
    for label in labels {
        assert!(
            table.lines().any(|l| l.split_whitespace().next() == Some(label)),
            "missing row {label}:\n{table}"
        );
        // Every row carries either a mean ± spread cell or the divergence
        // marker; nothing may be blank.
        let row = rows
            .iter()
            .find(|l| l.split_whitespace().next() == Some(label))
            .unwrap();
        assert!(
            row.contains("+/-") || row.trim_end().ends_with('-'),
            "row {label} has no result cell:\n{table}"
        );
    }
}
