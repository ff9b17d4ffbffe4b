use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;
use triplenet_core::data::{synthetic, DatasetName, Split, SVHN_TEST_FILE, SVHN_TRAIN_FILE};

fn triplenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triplenet"))
        .args(args)
        .env_remove("TRIPLENET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_svhn_fixture(dir: &Path) {
    synthetic(DatasetName::Svhn, Split::Train, 20, 5)
        .unwrap()
        .write_records(&dir.join(SVHN_TRAIN_FILE))
        .unwrap();
    synthetic(DatasetName::Svhn, Split::Test, 10, 5)
        .unwrap()
        .write_records(&dir.join(SVHN_TEST_FILE))
        .unwrap();
}

#[test]
fn summarize_prints_stage_sizes() {
    let o = triplenet(&["summarize", "--model", "s", "--input", "224"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for size in ["112 x 112", "56 x 56", "28 x 28", "14 x 14", "7 x 7", "1 x 1"] {
        assert!(out.contains(size), "missing {size} in\n{out}");
    }
    assert!(out.contains("720"));
    let b = stdout(&triplenet(&["summarize", "--model", "b"]));
    assert!(b.contains("1080"), "{b}");
}

#[test]
fn bad_input_size_fails() {
    let o = triplenet(&["summarize", "--input", "100"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("100"), "{}", stderr(&o));
    assert!(!triplenet(&["frobnicate"]).status.success());
}

#[test]
fn analyze_csv_and_diagnostic() {
    let csv = stdout(&triplenet(&["analyze", "--format", "csv", "--input", "32"]));
    assert_eq!(csv.lines().next().unwrap(), "name,kind,out_shape,params,macs,madd,act_bytes,rw_bytes");
    let text = triplenet(&["analyze", "--model", "b", "--compare", "s"]);
    assert!(text.status.success());
    let text = stdout(&text);
    assert!(text.contains("vs published 12.63 M"), "{text}");
    assert!(text.contains("reading:"));
    assert!(text.contains("delta"));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let ok = triplenet(&["gradcheck", "--seed", "3"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).matches("PASS").count(), 10);
    let bad = triplenet(&["gradcheck", "--inject-fault", "conv2d"]);
    assert!(!bad.status.success());
    let out = stdout(&bad);
    assert!(out.lines().any(|l| l.starts_with("conv2d") && l.ends_with("FAIL")), "{out}");
}

#[test]
fn bench_reports_latency() {
    let o = triplenet(&["--sequential", "bench", "--images", "3", "--warmup", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("3 images") && out.contains("per image mean"), "{out}");
    assert!(out.contains("Sequential"), "{out}");
    assert!(!triplenet(&["bench", "--images", "0"]).status.success());
}

#[test]
fn missing_data_directory_is_named() {
    let o = triplenet(&["train", "--data-dir", "/no/such/cifar", "--epochs", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/no/such/cifar"), "{}", stderr(&o));
    let o = triplenet(&["train", "--epochs", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("TRIPLENET_DATA_DIR"), "{}", stderr(&o));
}

#[test]
fn train_then_evaluate_on_fixture() {
    let dir = tempdir().unwrap();
    write_svhn_fixture(dir.path());
    let data = dir.path().to_str().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(format!("{name}.tpln"));
        let log = dir.path().join(format!("{name}.log"));
        let o = triplenet(&[
            "train",
            "--dataset",
            "svhn",
            "--data-dir",
            data,
            "--epochs",
            "2",
            "--batch",
            "10",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (out, std::fs::read_to_string(log).unwrap())
    };
    let (ckpt, log_a) = run("a");
    let (_, log_b) = run("b");
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.lines().count(), 3);
    assert!(Path::new(&format!("{}.stats", ckpt.display())).exists());

    let o = triplenet(&[
        "evaluate",
        "--dataset",
        "svhn",
        "--data-dir",
        data,
        "--weights",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("over 10 images"), "{}", stdout(&o));
}
