#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cycleflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycleflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = cycleflow(args);
    assert!(
        out.status.success(),
        "cycleflow {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub const TRAIN_TOML: &str = "\
seed = 3

[pairing]
batch_size = 4
crop_frames = 64
";

/// Synthetic corpus plus prepared features under `root`.
pub struct Prepared {
    pub corpus: PathBuf,
    pub data: PathBuf,
    pub train_toml: PathBuf,
}

pub fn prepare(root: &Path) -> Prepared {
    let corpus = root.join("corpus");
    let data = root.join("data");
    ok(&["gen-synthetic", "--out", s(&corpus), "--seed", "1"]);
    ok(&["prepare", "--corpus", s(&corpus), "--out", s(&data), "--test-fraction", "0.25"]);
    let train_toml = root.join("train.toml");
    std::fs::write(&train_toml, TRAIN_TOML).unwrap();
    Prepared { corpus, data, train_toml }
}

pub fn train(p: &Prepared, out: &Path, alpha: &str, steps: &str) {
    ok(&[
        "train",
        "--features",
        s(&p.data.join("train.features")),
        "--config",
        s(&p.train_toml),
        "--alpha",
        alpha,
        "--steps",
        steps,
        "--out",
        s(out),
    ]);
}
