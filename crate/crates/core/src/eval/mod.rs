//! Disentanglement measurement.
//!
//! Every variable (the spectrogram and the rhythm, pitch and content codes)
//! is collected frame by frame over a corpus, with codes held constant over
//! the frames they cover. Each variable is discretized by K-means and the
//! plug-in mutual information of cluster ids is reported for six pairs.

mod kmeans;
mod mi;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, TimeMap};
use crate::dataset::Utterance;
use crate::model::{encode, ModelState};
use crate::{seeds, Error, Result};

pub use kmeans::{fit_clusters, ClusterModel, KMeansConfig};
pub use mi::{discrete_mi, entropy};

/// Frames required per cluster for a stable fit.
pub const MIN_FRAMES_PER_CLUSTER: usize = 50;
/// Default number of clusters per variable.
pub const DEFAULT_K: usize = 10;

/// A clustered variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    S,
    Zc,
    Zr,
    Zf,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::S, Variable::Zc, Variable::Zr, Variable::Zf];

    pub fn label(self) -> &'static str {
        match self {
            Variable::S => "S",
            Variable::Zc => "Z_c",
            Variable::Zr => "Z_r",
            Variable::Zf => "Z_f",
        }
    }
}

/// The six reported pairs, in table order.
pub const MI_PAIRS: [(Variable, Variable); 6] = [
    (Variable::S, Variable::Zc),
    (Variable::S, Variable::Zr),
    (Variable::S, Variable::Zf),
    (Variable::Zc, Variable::Zr),
    (Variable::Zc, Variable::Zf),
    (Variable::Zr, Variable::Zf),
];

pub fn pair_label(pair: (Variable, Variable)) -> String {
    format!("{}-{}", pair.0.label(), pair.1.label())
}

/// Frame-aligned values of every variable over a corpus.
#[derive(Debug, Clone)]
pub struct FrameVariables {
    pub s: Mat,
    pub z_c: Mat,
    pub z_r: Mat,
    pub z_f: Mat,
    /// Index of the source utterance of every frame.
    pub utterance: Vec<usize>,
}

impl FrameVariables {
    pub fn get(&self, v: Variable) -> &Mat {
        match v {
            Variable::S => &self.s,
            Variable::Zc => &self.z_c,
            Variable::Zr => &self.z_r,
            Variable::Zf => &self.z_f,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.utterance.len()
    }
}

fn stack(parts: &[Mat]) -> Mat {
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
}

/// Encodes every utterance without random resampling and upsamples the
/// codes to the frame rate.
pub fn frame_variables(state: &ModelState, utterances: &[Utterance]) -> Result<FrameVariables> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("evaluation utterances"));
    }
    let cfg = &state.config;
    let (mut s, mut zc, mut zr, mut zf, mut utt) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, u) in utterances.iter().enumerate() {
        let z = encode(state, &u.spectrogram, &u.pitch, &u.speaker_vector, None)?;
        let t = u.n_frames();
        let up = |m: &Mat, down| TimeMap::repeat_upsample(m.nrows(), down, t).apply(m);
        s.push(u.spectrogram.frames.clone());
        zc.push(up(&z.content, cfg.down_c));
        zr.push(up(&z.rhythm, cfg.down_r));
        zf.push(up(&z.pitch, cfg.down_f));
        utt.extend(std::iter::repeat_n(i, t));
    }
    Ok(FrameVariables {
        s: stack(&s),
        z_c: stack(&zc),
        z_r: stack(&zr),
        z_f: stack(&zf),
        utterance: utt,
    })
}

/// One MI value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIEntry {
    pub pair: String,
    pub seed: u64,
    pub mi_nats: f64,
}

/// MI of the six pairs for one model, for every clustering seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIReport {
    pub model: String,
    pub k: usize,
    pub n_frames: usize,
    pub n_utterances: usize,
    pub protocol_version: u32,
    pub entries: Vec<MIEntry>,
}

impl MIReport {
    /// Mean over seeds, in table order.
    pub fn means(&self) -> Vec<(String, f64)> {
        MI_PAIRS
            .iter()
            .map(|&p| {
                let label = pair_label(p);
                let vals: Vec<f64> = self.entries.iter().filter(|e| e.pair == label).map(|e| e.mi_nats).collect();
                let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                (label, mean)
            })
            .collect()
    }

    pub fn mean(&self, pair: (Variable, Variable)) -> f64 {
        let label = pair_label(pair);
        self.means().into_iter().find(|(l, _)| *l == label).map(|(_, v)| v).unwrap_or(f64::NAN)
    }

    fn csv_rows(&self, out: &mut String) {
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{},{}", e.pair, self.model, e.mi_nats, self.n_frames, self.k, e.seed);
        }
    }

    /// `pair,model,mi_nats,n_frames,k,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        self.csv_rows(&mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const CSV_HEADER: &str = "pair,model,mi_nats,n_frames,k,seed\n";

/// Options shared by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MIConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub kmeans: KMeansConfig,
}

impl Default for MIConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seeds: vec![0],
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Six-pair MI report for `state` on `utterances`.
pub fn mi_report(state: &ModelState, model: &str, utterances: &[Utterance], cfg: &MIConfig) -> Result<MIReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one clustering seed is required".into()));
    }
    let vars = frame_variables(state, utterances)?;
    let needed = cfg.k * MIN_FRAMES_PER_CLUSTER;
    if vars.n_frames() < needed {
        return Err(Error::InsufficientData(format!(
            "{} frames, need at least {needed} for k = {}",
            vars.n_frames(),
            cfg.k
        )));
    }
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        let mut ids = std::collections::HashMap::new();
        for (i, v) in Variable::ALL.into_iter().enumerate() {
            let m = fit_clusters(vars.get(v), cfg.k, seeds::derive(seed, i as u64), v.label(), &cfg.kmeans)?;
            ids.insert(v, m.assign(vars.get(v)));
        }
        for p in MI_PAIRS {
            entries.push(MIEntry {
                pair: pair_label(p),
                seed,
                mi_nats: discrete_mi(&ids[&p.0], &ids[&p.1])?,
            });
        }
    }
    Ok(MIReport {
        model: model.to_string(),
        k: cfg.k,
        n_frames: vars.n_frames(),
        n_utterances: utterances.len(),
        protocol_version: 1,
        entries,
    })
}

/// Two reports on the same data and the per-pair change of means (`b - a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: MIReport,
    pub b: MIReport,
    pub deltas: Vec<(String, f64)>,
}

impl Comparison {
    pub fn from_reports(a: MIReport, b: MIReport) -> Self {
        let deltas = a
            .means()
            .into_iter()
            .zip(b.means())
            .map(|((label, ma), (_, mb))| (label, mb - ma))
            .collect();
        Self { a, b, deltas }
    }

    /// Number of pairs whose mean MI is lower for `b`.
    pub fn rows_favoring_b(&self) -> usize {
        self.deltas.iter().filter(|(_, d)| *d < 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        self.a.csv_rows(&mut out);
        self.b.csv_rows(&mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Text table with one row per pair and a column per model.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>14}{:>14}{:>11}", "pair", self.a.model, self.b.model, "delta");
        for ((label, ma), ((_, mb), (_, d))) in self.a.means().into_iter().zip(self.b.means().into_iter().zip(&self.deltas)) {
            let _ = writeln!(out, "{label:<10}{ma:>14.4}{mb:>14.4}{d:>+11.4}");
        }
        out
    }
}

/// Reports for two models with the same clustering protocol and seeds.
pub fn compare_models(
    a: (&str, &ModelState),
    b: (&str, &ModelState),
    utterances: &[Utterance],
    cfg: &MIConfig,
) -> Result<Comparison> {
    if a.1.config.features != b.1.config.features {
        return Err(Error::ConfigMismatch("models were trained on different feature settings".into()));
    }
    let ra = mi_report(a.1, a.0, utterances, cfg)?;
    let rb = mi_report(b.1, b.0, utterances, cfg)?;
    Ok(Comparison::from_reports(ra, rb))
}

/// Per-frame labels expanded from per-utterance labels.
pub fn frame_labels(vars: &FrameVariables, utterance_labels: &[usize]) -> Vec<usize> {
    vars.utterance.iter().map(|&u| utterance_labels[u]).collect()
}
