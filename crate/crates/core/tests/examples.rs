//! Runs every example binary and checks a line of its output.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> String {
    // examples land next to the binary, under `examples/`
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_complseg"));
    let path = bin.parent().unwrap().join("examples").join(name);
    if !path.is_file() {
        let mut build = Command::new(env!("CARGO"));
        build.args(["build", "-p", "complseg", "--example", name]);
        if bin.parent().unwrap().ends_with("release") {
            build.arg("--release");
        }
        assert!(build.status().unwrap().success(), "building example {name}");
    }
    let out = Command::new(&path).output().unwrap();
    assert!(
        out.status.success(),
        "example {name} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_dataset() {
    let out = example("generate_dataset");
    assert_eq!(out.lines().filter(|l| l.starts_with("subset ")).count(), 4);
}

#[test]
fn implicit_labels() {
    let out = example("implicit_labels");
    assert!(out.contains("mask only:"));
}

#[test]
fn masked_loss() {
    assert!(example("masked_loss").contains("all with zero gradient"));
}

#[test]
fn significance() {
    assert!(example("significance").contains("p = 0.0625"));
}

#[test]
fn train_implicit() {
    assert!(example("train_implicit").contains("kept epoch"));
}

#[test]
fn compare_trials() {
    assert!(example("compare_trials").contains("pooled IL vs EN"));
}

#[test]
fn bench_latency() {
    assert!(example("bench_latency").contains("ensemble-6"));
}

#[test]
fn checkpoint_and_infer() {
    assert!(example("checkpoint_and_infer").contains("class map written"));
}
