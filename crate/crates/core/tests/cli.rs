use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use uqdepth::cli::run_from;
use uqdepth::metrics::{parse_report, REPORT_HEADER};
use uqdepth::Error;

const TINY: &str = "# small and fast\nenc_channels = 4,8\nbottleneck_channels = 8\nbatch_size = 4\ncrop = 16\nepochs = 2\n";

fn run(args: &[&str]) -> uqdepth::Result<String> {
    let mut argv = vec!["uqdepth"];
    argv.extend_from_slice(args);
    run_from(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen train/val, then train `method` with the tiny config.
fn setup(dir: &Path, method: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    for (split, n) in [("train", "6"), ("val", "3")] {
        run(&["gen", "--n", n, "--size", "32", "--seed", "5", "--split", split, "--out", s(&data)]).unwrap();
    }
    let cfg = dir.join("tiny.txt");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join(format!("run_{method}"));
    run(&["train", "--config", s(&cfg), "--method", method, "--data", s(&data), "--out", s(&out), "--quiet"]).unwrap();
    (data, out)
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = setup(dir.path(), "gnll");
    for f in ["config.txt", "model.uqdn", "train_log.csv", "epochs.csv", "run.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let snapshot = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(snapshot.contains("method = gnll") && snapshot.contains("input_size = 32x32"));

    let report = dir.path().join("report.csv");
    run(&["eval", "--run", s(&out), "--data", s(&data), "--report", s(&report), "--emit-maps"]).unwrap();
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some(REPORT_HEADER));
    let rows = parse_report(&text, &report).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].depth.is_some() && rows[0].pavpu.is_some());
    assert!(rows[0].infer_ms_mean.is_none());
    let meta = fs::read_to_string(dir.path().join("report.csv.meta")).unwrap();
    assert!(meta.contains("log10_mode = mae"));
    let maps = dir.path().join("report_maps");
    assert!(maps.join("0000_depth.pfm").exists() && maps.join("0002_uncertainty.pfm").exists());

    // Evaluating again must not touch the run directory.
    let before = fs::read(out.join("model.uqdn")).unwrap();
    let r2 = dir.path().join("r2.csv");
    run(&["eval", "--run", s(&out), "--data", s(&data), "--report", s(&r2)]).unwrap();
    assert_eq!(fs::read(out.join("model.uqdn")).unwrap(), before);
    assert_eq!(fs::read(&r2).unwrap(), text.as_bytes());
}

#[test]
fn bench_and_compare_merge_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = setup(dir.path(), "baseline");
    let report = dir.path().join("report_base.csv");
    run(&["eval", "--run", s(&out), "--data", s(&data), "--report", s(&report)]).unwrap();
    let tta = dir.path().join("report_tta.csv");
    run(&["eval", "--run", s(&out), "--data", s(&data), "--report", s(&tta), "--method", "tta"]).unwrap();
    let bench = dir.path().join("bench_base.csv");
    run(&["bench", "--run", s(&out), "--runs", "3", "--warmup", "1", "--report", s(&bench)]).unwrap();

    let merged = dir.path().join("table.csv");
    run(&["compare", "--runs", s(dir.path()), "--out", s(&merged)]).unwrap();
    let rows = parse_report(&fs::read_to_string(&merged).unwrap(), &merged).unwrap();
    let methods: Vec<_> = rows.iter().map(|r| r.method.name()).collect();
    assert_eq!(methods, ["baseline", "tta"]);
    assert!(rows[0].depth.is_some() && rows[0].fps.is_some());
    assert!(rows[1].fps.is_none());
    assert_eq!(rows[1].flops, 3 * rows[0].flops);

    let err = run(&["compare", "--runs", s(&report), s(&report)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let err = run(&["gen", "--n", "2", "--size", "50", "--out", s(&data)]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");

    run(&["gen", "--n", "2", "--size", "32", "--out", s(&data)]).unwrap();
    let out = dir.path().join("r");
    let err = run(&["train", "--data", s(&data), "--out", s(&out), "--method", "bayes"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = run(&["train", "--data", s(&data), "--out", s(&out), "--set", "colour=red"]).unwrap_err();
    assert!(err.to_string().contains("colour"));
    let err = run(&["train", "--data", s(&dir.path().join("missing")), "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn corrupt_dataset_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    run(&["gen", "--n", "2", "--size", "32", "--split", "val", "--out", s(&data)]).unwrap();
    let depth = fs::read_dir(data.join("val/depths")).unwrap().next().unwrap().unwrap().path();
    let mut bytes = fs::read(&depth).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&depth, bytes).unwrap();
    let err = uqdepth::synthdata::read_dataset(&data.join("val")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains(depth.file_name().unwrap().to_str().unwrap()));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_uqdepth");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap();

    let ok = code(&["gen", "--n", "1", "--size", "16", "--out", s(&dir.path().join("d"))]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let bad = code(&["gen", "--n", "1", "--size", "18", "--out", s(&dir.path().join("e"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));

    let missing = code(&["eval", "--run", "/nonexistent", "--data", "/nonexistent", "--report", s(&dir.path().join("r.csv"))]);
    assert_eq!(missing.status.code(), Some(3));
}
