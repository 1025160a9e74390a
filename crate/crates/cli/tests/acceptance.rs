//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Contract criteria (3 to 7) fail the test when they fail. The two
//! empirical criteria (1 and 2) compare trained models on the synthetic
//! corpus; their verdict is printed, and they only fail the test when
//! `ACCEPTANCE_STRICT=1` is set. `ACCEPTANCE_STEPS` overrides the training
//! length of the paired runs.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use cycleflow::dataset::{build_utterances, generate_synthetic, FeatureConfig, PairBatch, PairingConfig, SyntheticSpec, Utterance};
use cycleflow::eval::{discrete_mi, mi_report, MIConfig, MI_PAIRS};
use cycleflow::model::{Factor, FactorSet, ModelConfig, ModelState};
use cycleflow::signal::{random_resample, ResampleSpec};
use cycleflow::training::{
    evaluate_losses, loss_and_gradients, reconstruction_error, rfs, rfs_choice, run_linear_toy, train, LinearToyConfig,
    ObjectiveConfig, TrainConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Array2<f64>;

const SEEDS: u64 = 5;
const DEFAULT_STEPS: u64 = 4000;
const MAX_RUN: Duration = Duration::from_secs(30 * 60);
const REC_TOLERANCE: f64 = 0.15;
const MI_ROWS_REQUIRED: usize = 5;
const MI_ORACLE_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-3;
const TOY_TARGET: f64 = 1e-4;
const TOY_MAX_CORR: f64 = 0.05;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    strict: bool,
}

fn run(id: usize, name: &'static str, strict: bool, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t0 = Instant::now();
    let (pass, detail) = f();
    let v = Verdict {
        id,
        name,
        pass,
        detail,
        elapsed: t0.elapsed(),
        strict,
    };
    println!(
        "criterion {} {:<28} {}  ({:.1}s) {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.elapsed.as_secs_f64(),
        v.detail
    );
    v
}

fn synthetic_split(seed: u64, fc: &FeatureConfig) -> (Vec<Utterance>, Vec<Utterance>) {
    let corpus = generate_synthetic(&SyntheticSpec::new(4, 4, 2, 2, 2, seed)).unwrap();
    let items = corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), u.speaker_id.clone(), u.waveform.clone()))
        .collect();
    let utts = build_utterances(items, fc, &fc.embedder()).unwrap();
    utts.into_iter().partition(|u| u.id.ends_with("u00"))
}

struct PairedRuns {
    /// Per seed: (held-out rec, MI row means) for alpha 0 and alpha 5.
    base: Vec<(f64, Vec<f64>)>,
    cycle: Vec<(f64, Vec<f64>)>,
    longest: Duration,
}

fn paired_runs(steps: u64) -> PairedRuns {
    let fc = FeatureConfig::default();
    let mut out = PairedRuns {
        base: Vec::new(),
        cycle: Vec::new(),
        longest: Duration::ZERO,
    };
    for seed in 0..SEEDS {
        let (train_u, test_u) = synthetic_split(seed, &fc);
        for alpha in [0.0, 5.0] {
            let t0 = Instant::now();
            let cfg = TrainConfig {
                steps,
                seed,
                objective: ObjectiveConfig {
                    alpha,
                    ..Default::default()
                },
                pairing: PairingConfig {
                    batch_size: 8,
                    crop_frames: 64,
                    ..Default::default()
                },
                model: ModelConfig {
                    init_seed: seed,
                    ..Default::default()
                },
                ..Default::default()
            };
            let state = train(ModelState::new(cfg.model.clone()).unwrap(), &train_u, &cfg, None).unwrap().state;
            let rec = reconstruction_error(&state, &test_u).unwrap();
            let mi_cfg = MIConfig {
                seeds: vec![seed],
                ..Default::default()
            };
            let report = mi_report(&state, if alpha == 0.0 { "speechflow" } else { "cycleflow" }, &test_u, &mi_cfg).unwrap();
            let means = report.means().into_iter().map(|(_, v)| v).collect();
            out.longest = out.longest.max(t0.elapsed());
            println!("    seed {seed} alpha {alpha}: held-out rec {rec:.5}, MI {means:.3?}");
            if alpha == 0.0 { &mut out.base } else { &mut out.cycle }.push((rec, means));
        }
    }
    out
}

fn mean_rows(runs: &[(f64, Vec<f64>)]) -> Vec<f64> {
    (0..MI_PAIRS.len())
        .map(|i| runs.iter().map(|r| r.1[i]).sum::<f64>() / runs.len() as f64)
        .collect()
}

fn mean_rec(runs: &[(f64, Vec<f64>)]) -> f64 {
    runs.iter().map(|r| r.0).sum::<f64>() / runs.len() as f64
}

fn criterion_mi_direction(r: &PairedRuns) -> (bool, String) {
    let (a, b) = (mean_rows(&r.base), mean_rows(&r.cycle));
    let lower: Vec<bool> = a.iter().zip(&b).map(|(a, b)| b < a).collect();
    let n = lower.iter().filter(|&&x| x).count();
    let rows: Vec<String> = MI_PAIRS
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{} {:.3}->{:.3}{}", cycleflow::eval::pair_label(*p), a[i], b[i], if lower[i] { "" } else { "!" }))
        .collect();
    (
        n >= MI_ROWS_REQUIRED && r.longest <= MAX_RUN,
        format!("{n}/6 rows lower [{}], longest run {:.0}s", rows.join(", "), r.longest.as_secs_f64()),
    )
}

fn criterion_rec_parity(r: &PairedRuns) -> (bool, String) {
    let (a, b) = (mean_rec(&r.base), mean_rec(&r.cycle));
    let rel = (b - a).abs() / a;
    (rel <= REC_TOLERANCE, format!("alpha 0 {a:.5}, alpha 5 {b:.5}, relative gap {:.1}%", 100.0 * rel))
}

/// Expands a joint count table into aligned id sequences.
fn from_table(table: &[&[usize]]) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            a.extend(std::iter::repeat_n(i, c));
            b.extend(std::iter::repeat_n(j, c));
        }
    }
    (a, b)
}

fn criterion_mi_oracle() -> (bool, String) {
    let ln = f64::ln;
    // Closed forms: sum over cells of p(a,b) ln(p(a,b) / (p(a) p(b))).
    let tables: Vec<(Vec<&[usize]>, f64)> = vec![
        (vec![&[1, 0], &[0, 1]], ln(2.0)),
        (vec![&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]], ln(3.0)),
        (vec![&[2, 2], &[2, 2]], 0.0),
        (vec![&[4], &[1], &[3]], 0.0),
        (vec![&[2, 0], &[0, 1]], ln(3.0) - 2.0 / 3.0 * ln(2.0)),
        (vec![&[1, 1], &[0, 2]], 1.5 * ln(2.0) - 0.75 * ln(3.0)),
        (vec![&[3, 1], &[1, 3]], 0.75 * ln(3.0) - ln(2.0)),
        (vec![&[2, 2, 0], &[0, 0, 4]], ln(2.0)),
        (vec![&[1, 0, 0, 0], &[0, 1, 0, 0], &[0, 0, 1, 0], &[0, 0, 0, 1]], ln(4.0)),
        (vec![&[1, 1, 0], &[0, 1, 1]], 0.5 * ln(2.0)),
    ];
    let mut worst = 0.0f64;
    for (t, expected) in &tables {
        let (a, b) = from_table(t);
        worst = worst.max((discrete_mi(&a, &b).unwrap() - expected).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 100_000;
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let indep = discrete_mi(&a, &b).unwrap();

    let mut fuzz_ok = true;
    for _ in 0..1000 {
        let k = rng.random_range(1..=10);
        let len = rng.random_range(1..400);
        let a: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let (ab, ba) = (discrete_mi(&a, &b).unwrap(), discrete_mi(&b, &a).unwrap());
        fuzz_ok &= ab.to_bits() == ba.to_bits() && ab >= 0.0 && ab <= (k as f64).ln() + 1e-12;
    }
    (
        worst <= MI_ORACLE_TOL && indep < 0.01 && fuzz_ok,
        format!("worst closed-form error {worst:.1e}, independent MI {indep:.5}, fuzz symmetric+bounded {fuzz_ok}"),
    )
}

fn minimal_batch() -> (ModelConfig, PairBatch) {
    let fc = FeatureConfig {
        speaker_dim: 2,
        ..Default::default()
    };
    let corpus = generate_synthetic(&SyntheticSpec::new(2, 2, 2, 2, 1, 4)).unwrap();
    let items = corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), u.speaker_id.clone(), u.waveform.clone()))
        .collect();
    let utts = build_utterances(items, &fc, &fc.embedder()).unwrap();
    let frames = 16;
    let batch = PairBatch {
        pairs: vec![(utts[0].crop(8, frames), utts[9].crop(20, frames)), (utts[5].crop(0, frames), utts[14].crop(30, frames))],
        frames,
    };
    let cfg = ModelConfig {
        d_r: 2,
        d_f: 2,
        d_c: 2,
        d_t: 2,
        down_r: 4,
        down_f: 4,
        down_c: 4,
        encoder_hidden: 3,
        decoder_hidden: 4,
        features: fc,
        init_seed: 3,
        ..Default::default()
    };
    (cfg, batch)
}

fn criterion_gradients() -> (bool, String) {
    let (cfg, batch) = minimal_batch();
    let state = ModelState::new(cfg).unwrap();
    // The finite-difference check needs the undetached objective, since a
    // parameter perturbation also moves the cycle target.
    let obj = |alpha| ObjectiveConfig {
        alpha,
        detach_cycle_target: false,
    };
    let seed = 11;
    let grad = |alpha| loss_and_gradients(&state, &batch, &obj(alpha), seed).unwrap().1;
    let (g0, g1, g5) = (grad(0.0), grad(1.0), grad(5.0));
    let g_cyc: Vec<Mat> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = [0.0f64; 3];
    for _ in 0..3 {
        let dir: Vec<Mat> = state.params.values().map(|m| Mat::from_shape_fn(m.dim(), |_| rng.random_range(-1.0..1.0))).collect();
        let h = 1e-5;
        let at = |sign: f64| {
            let mut s = state.clone();
            for (p, d) in s.params.values_mut().zip(&dir) {
                p.scaled_add(sign * h, d);
            }
            evaluate_losses(&s, &batch, &obj(5.0), seed).unwrap()
        };
        let (plus, minus) = (at(1.0), at(-1.0));
        let numeric = [
            (plus.rec - minus.rec) / (2.0 * h),
            (plus.cyc - minus.cyc) / (2.0 * h),
            (plus.total - minus.total) / (2.0 * h),
        ];
        for (i, g) in [&g0, &g_cyc, &g5].into_iter().enumerate() {
            let analytic: f64 = g.iter().zip(&dir).map(|(g, d)| (g * d).sum()).sum();
            let rel = (analytic - numeric[i]).abs() / analytic.abs().max(numeric[i].abs()).max(1e-8);
            worst[i] = worst[i].max(rel);
        }
    }
    (
        worst.iter().all(|&w| w < GRAD_REL_TOL),
        format!("worst relative error rec {:.1e}, cyc {:.1e}, total {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn criterion_linear_toy() -> (bool, String) {
    let r = run_linear_toy(&LinearToyConfig::default()).unwrap();
    (
        r.reached_target && r.final_cycle < TOY_TARGET && r.final_corr.abs() < TOY_MAX_CORR,
        format!(
            "cycle {:.2e} after {} steps, corr {:.3} -> {:.4}",
            r.final_cycle, r.steps, r.initial_corr, r.final_corr
        ),
    )
}

fn random_factors(rng: &mut ChaCha8Rng) -> FactorSet {
    let mut m = |r, c| Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    FactorSet {
        rhythm: m(3, 2),
        pitch: m(3, 4),
        content: m(3, 8),
        timbre: m(1, 16),
        frames: 24,
    }
}

fn criterion_rfs_rr() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut single = true;
    let mut counts = [0usize; 4];
    let n = 10_000u64;
    for seed in 0..n {
        let (z1, z2) = (random_factors(&mut rng), random_factors(&mut rng));
        let out = rfs(&z1, &z2, seed).unwrap();
        let changed: Vec<Factor> = Factor::ALL.into_iter().filter(|&f| out.z_prime.get(f) != z1.get(f)).collect();
        single &= changed == [out.substituted_factor] && out.z_prime.get(out.substituted_factor) == z2.get(out.substituted_factor);
        counts[Factor::ALL.iter().position(|&f| f == rfs_choice(seed)).unwrap()] += 1;
    }
    // Two-sided 99.9% binomial band around n / 4.
    let sd = (n as f64 * 0.25 * 0.75).sqrt();
    let uniform = counts.iter().all(|&c| (c as f64 - n as f64 / 4.0).abs() <= 3.29 * sd);

    let mut identity = true;
    let mut bounded = true;
    for _ in 0..1000 {
        let t = rng.random_range(1..300);
        let smin = rng.random_range(1..20);
        let smax = smin + rng.random_range(0..30);
        let seq = Mat::from_shape_fn((t, 3), |_| rng.random_range(-1.0..1.0));
        let unit = ResampleSpec {
            segment_len_range: (smin, smax),
            rate_range: (1.0, 1.0),
            seed: rng.random(),
        };
        identity &= random_resample(&seq, &unit).unwrap() == seq;

        let rmin = rng.random_range(0.2..1.5);
        let rmax = rmin + rng.random_range(0.0..1.0);
        let spec = ResampleSpec {
            rate_range: (rmin, rmax),
            ..unit
        };
        let len = random_resample(&seq, &spec).unwrap().nrows() as f64;
        // Each segment rounds once and yields at least one frame.
        let segments = t.div_ceil(smin) as f64;
        let (lo, hi) = ((t as f64 * rmin - 0.5 * segments).max(1.0), t as f64 * rmax + segments);
        bounded &= len >= lo && len <= hi;
    }
    (
        single && uniform && identity && bounded,
        format!("single substitution {single}, counts {counts:?}, unit-rate identity {identity}, length bounds {bounded}"),
    )
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_cycleflow"))
            .current_dir(dir)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("train.toml"), common::TRAIN_TOML).unwrap();
    run(&["gen-synthetic", "--out", "corpus", "--seed", "2"]);
    run(&["prepare", "--corpus", "corpus", "--out", "data", "--test-fraction", "0.25"]);
    run(&["train", "--features", "data/train.features", "--config", "train.toml", "--steps", "50", "--out", "model"]);
    run(&["eval-mi", "--features", "data/test.features", "--checkpoint", "model/model.ckpt", "--out", "mi"]);
    run(&[
        "convert",
        "--checkpoint",
        "model/model.ckpt",
        "--source",
        "corpus/spk00/spk00_c00_p00_r00_u00.wav",
        "--target",
        "corpus/spk01/spk01_c01_p01_r01_u00.wav",
        "--swap",
        "rhythm,pitch",
        "--out",
        "conv/style.wav",
    ]);
}

fn criterion_determinism() -> (bool, String) {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    pipeline(&a);
    pipeline(&b);
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(&a, &mut fa);
    collect_files(&b, &mut fb);
    let rel = |root: &Path, v: &[std::path::PathBuf]| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    let same_names = rel(&a, &fa) == rel(&b, &fb);
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(&a).unwrap().display().to_string())
        .collect();
    let kinds = |ext: &str| fa.iter().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    (
        same_names && differing.is_empty() && kinds("wav") > 0 && kinds("csv") >= 2 && kinds("json") >= 2,
        format!(
            "{} files compared ({} csv, {} json, {} wav), differing {:?}",
            fa.len(),
            kinds("csv"),
            kinds("json"),
            kinds("wav"),
            differing
        ),
    )
}

#[test]
fn acceptance() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let steps = std::env::var("ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_STEPS);

    let mut verdicts = Vec::new();
    verdicts.push(run(3, "MI estimator oracles", true, criterion_mi_oracle));
    verdicts.push(run(4, "gradient correctness", true, criterion_gradients));
    verdicts.push(run(5, "linear toy independence", true, criterion_linear_toy));
    verdicts.push(run(6, "RFS/RR contracts", true, criterion_rfs_rr));
    verdicts.push(run(7, "end-to-end determinism", true, criterion_determinism));

    println!("    paired training: {SEEDS} seeds x (alpha 0, alpha 5), {steps} steps each");
    let runs = paired_runs(steps);
    verdicts.push(run(1, "MI direction", strict, || criterion_mi_direction(&runs)));
    verdicts.push(run(2, "reconstruction parity", strict, || criterion_rec_parity(&runs)));
    verdicts.sort_by_key(|v| v.id);

    println!("summary:");
    for v in &verdicts {
        println!("  criterion {} {:<28} {}", v.id, v.name, if v.pass { "PASS" } else { "FAIL" });
    }
    let hard: Vec<usize> = verdicts.iter().filter(|v| v.strict && !v.pass).map(|v| v.id).collect();
    assert!(hard.is_empty(), "failed criteria: {hard:?}");
}
