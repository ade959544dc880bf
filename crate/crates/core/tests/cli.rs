//! End-to-end runs of the `complseg` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use complseg::data_fusion::raster::{read_indexed, read_rgb, write_rgb};
use complseg::data_fusion::load_manifest;
use complseg::grid::Grid;
use complseg::model::{save_checkpoint, Checkpoint, ModelKind, TinyConfig, TinyEncoderDecoder};
use complseg::trainer::Trial;

const TINY: &str = r#"
[data]
n_train = 8
n_val = 4
n_test = 4
height = 32
width = 32

[train]
epochs = 1
batch_size = 4

[train.model]
depth = 2
base_width = 4
"#;

fn complseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_complseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = complseg(args);
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

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        Workspace { _dir: dir, root, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn run(&self, args: &[&str]) -> String {
        let mut all = vec!["--config", s(&self.config)];
        all.extend_from_slice(args);
        ok(&all)
    }

    fn generate(&self, out: &str, seed: &str) -> PathBuf {
        let out = self.path(out);
        self.run(&["generate", "--seed", seed, "--out", s(&out)]);
        out
    }

    fn train(&self, data: &Path, manifest: &str, trial: &str, out: &str) -> PathBuf {
        let out = self.path(out);
        self.run(&[
            "train",
            "--manifest",
            s(&data.join(manifest)),
            "--trial",
            trial,
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        out
    }
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn generate_is_reproducible() {
    let ws = Workspace::new();
    let a = ws.generate("a", "11");
    let b = ws.generate("b", "11");
    let c = ws.generate("c", "12");
    let (a, b, c) = (dir_bytes(&a), dir_bytes(&b), dir_bytes(&c));
    assert!(a.len() > 2);
    assert!(a == b, "same seed produced different bytes");
    assert!(a != c, "different seeds produced identical bytes");
}

#[test]
fn generate_writes_one_subset_per_class() {
    let ws = Workspace::new();
    let out = ws.path("gen");
    ws.run(&["generate", "--classes", "4", "--confusable", "A:B", "--out", s(&out)]);
    let binary = load_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(binary.subsets.len(), 4);
    assert!(binary.subsets.iter().all(|s| s.annotated_classes.len() == 1));
    let full = load_manifest(&out.join("manifest_full.json")).unwrap();
    assert_eq!(full.subsets.len(), 1);
    assert_eq!(full.subsets[0].annotated_classes.len(), 4);
}

#[test]
fn train_writes_checkpoints_per_trial() {
    let ws = Workspace::new();
    let data = ws.generate("data", "1");

    let il = ws.train(&data, "manifest.json", "il", "il");
    assert!(il.join("il.ckpt").is_file());
    assert!(il.join("train_report.json").is_file());

    let en = ws.train(&data, "manifest.json", "en", "en");
    for c in ["A", "B", "C", "D"] {
        assert!(en.join(format!("en-{c}.ckpt")).is_file(), "missing member {c}");
    }

    let fs_full = ws.train(&data, "manifest_full.json", "fs", "fs");
    assert!(fs_full.join("fs.ckpt").is_file());

    let out = complseg(&[
        "--config",
        s(&ws.config),
        "train",
        "--manifest",
        s(&data.join("manifest.json")),
        "--trial",
        "fs",
        "--out",
        s(&ws.path("fs-bad")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not fully labeled"));
}

#[test]
fn eval_reports_per_class_significance() {
    let ws = Workspace::new();
    let data = ws.generate("data", "1");
    let il = ws.train(&data, "manifest.json", "il", "il");
    let en = ws.train(&data, "manifest.json", "en", "en");
    let members: Vec<String> = ["A", "B", "C", "D"]
        .iter()
        .map(|c| s(&en.join(format!("en-{c}.ckpt"))).to_string())
        .collect();
    let out = ws.path("eval");
    let il_spec = format!("il={}", s(&il.join("il.ckpt")));
    let en_spec = format!("en={}", members.join(","));
    let md = ws.run(&[
        "eval",
        "--manifest",
        s(&data.join("manifest_full.json")),
        "--model",
        &il_spec,
        "--model",
        &en_spec,
        "--compare",
        "il:en",
        "--out",
        s(&out),
    ]);
    assert!(md.contains("il"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let targets: Vec<&str> = json["significance"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["target"].as_str().unwrap())
        .collect();
    for t in ["A", "B", "C", "D", "mean"] {
        assert!(targets.contains(&t), "no test for {t}");
    }
    assert!(out.join("metrics.md").is_file());
    assert!(out.join("confusion_il.png").is_file());
    assert!(out.join("confusion_en.png").is_file());

    let missing = complseg(&[
        "eval",
        "--manifest",
        s(&data.join("manifest_full.json")),
        "--model",
        &format!("il={}", s(&ws.path("nope.ckpt"))),
        "--out",
        s(&out),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing file"));
}

/// A model with all-zero weights outputs probability 0.5 everywhere.
fn zero_checkpoint(ws: &Workspace, data: &Path) -> PathBuf {
    let manifest = load_manifest(&data.join("manifest.json")).unwrap();
    let model = TinyEncoderDecoder::zeros(TinyConfig { depth: 2, base_width: 4 }, manifest.catalog.len()).unwrap();
    let ckpt = Checkpoint {
        kind: ModelKind { trial: Trial::Il, member_class: None, background_channel: false },
        model,
    };
    let path = ws.path("zero.ckpt");
    fs::write(&path, save_checkpoint(&ckpt, &manifest.catalog)).unwrap();
    path
}

#[test]
fn infer_threshold_and_overlay() {
    let ws = Workspace::new();
    let data = ws.generate("data", "1");
    let ckpt = zero_checkpoint(&ws, &data);
    let image = ws.path("plain.png");
    write_rgb(&image, &Grid::filled(12, 20, [40u8, 40, 40])).unwrap();

    // p = 0.5 clears tau = 0.4 and misses tau = 0.6
    for (tau, expect_bg) in [("0.6", true), ("0.4", false)] {
        let out = ws.path(&format!("infer-{tau}"));
        ws.run(&[
            "infer",
            "--manifest",
            s(&data.join("manifest.json")),
            "--checkpoint",
            s(&ckpt),
            "--image",
            s(&image),
            "--tau",
            tau,
            "--out",
            s(&out),
        ]);
        let classes = read_indexed(&out.join("plain.classes.png")).unwrap();
        assert_eq!(classes.shape(), (12, 20));
        assert_eq!(classes.as_slice().iter().all(|&i| i == 0), expect_bg, "tau {tau}");
        let overlay = read_rgb(&out.join("plain.overlay.png")).unwrap();
        assert_eq!(overlay.shape(), (12, 20));
        if expect_bg {
            assert!(overlay.as_slice().iter().all(|p| *p == [40, 40, 40]));
        }
    }
}

#[test]
fn infer_with_ensemble_members() {
    let ws = Workspace::new();
    let data = ws.generate("data", "2");
    let en = ws.train(&data, "manifest.json", "en", "en");
    let full = load_manifest(&data.join("manifest_full.json")).unwrap();
    let image = data.join(&full.subsets[0].frames[0].image);
    let mut args = vec!["infer".to_string(), "--manifest".into(), s(&data.join("manifest.json")).into()];
    for c in ["D", "B", "A", "C"] {
        args.push("--checkpoint".into());
        args.push(s(&en.join(format!("en-{c}.ckpt"))).into());
    }
    let out = ws.path("infer");
    args.extend(["--image".into(), s(&image).into(), "--out".into(), s(&out).into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let printed = ws.run(&refs);
    let class_map = PathBuf::from(printed.lines().next().unwrap());
    let indices = read_indexed(&class_map).unwrap();
    assert_eq!(indices.shape(), (32, 32));
    assert!(indices.as_slice().iter().all(|&i| i <= 4));
}

#[test]
fn bench_ensembles_slower_than_single() {
    let out = tempfile::tempdir().unwrap();
    let json = ok(&["bench", "--size", "32", "--iterations", "100", "--seed", "0", "--out", s(out.path())]);
    let suite: serde_json::Value = serde_json::from_str(&json).unwrap();
    let single = suite["single"]["mean_ms"].as_f64().unwrap();
    let six = suite["ensembles"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["models"] == 6)
        .unwrap()["mean_ms"]
        .as_f64()
        .unwrap();
    assert!(six > single, "K=6 {six} ms vs single {single} ms");
    assert!(out.path().join("bench.json").is_file());
}
