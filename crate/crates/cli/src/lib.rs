//! Subcommands of the `cycleflow` binary, usable as library calls.
//!
//! Every command is deterministic given its arguments and seeds; artifacts
//! carry no timestamps.

mod synthesis;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cycleflow::dataset::{
    extract_features, generate_synthetic, load_utterances, save_utterances, scan_corpus, FeatureConfig, SplitConfig,
    SyntheticSpec, Utterance,
};
use cycleflow::eval::{mi_report, Comparison, MIConfig};
use cycleflow::model::ModelState;
use cycleflow::training::{reconstruction_error, train, TrainConfig};
use cycleflow::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use synthesis::{
    cmd_convert, cmd_edit, reconcile_length, ConstantPolicy, ConvertArgs, ConvertRequest, EditArgs, EditRequest, InversionArgs, Reconciliation,
    Sidecar,
};

#[derive(Debug, Parser)]
#[command(name = "cycleflow", version, about = "Speech factorization into rhythm, pitch, content and timbre")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a `<speaker>/<utt>.wav` corpus, split speakers and extract features.
    Prepare(PrepareArgs),
    /// Write a synthetic corpus with known factor labels.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model on prepared features.
    Train(TrainArgs),
    /// Mutual information between the spectrogram and the codes (one or two models).
    EvalMi(EvalMiArgs),
    /// Swap factors of a source utterance with those of a target utterance.
    Convert(ConvertArgs),
    /// Replace factors of an utterance with constants.
    Edit(EditArgs),
}

/// Reads a TOML file into `T`, rejecting unknown keys by name.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub features: FeatureConfig,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Corpus root with one directory per speaker.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for `train.features`, `test.features` and `split.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with `[features]` and `[split]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct SplitRecord<'a> {
    train: Vec<&'a str>,
    test: Vec<&'a str>,
    config: &'a PrepareConfig,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let mut cfg: PrepareConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => PrepareConfig::default(),
    };
    if let Some(f) = args.test_fraction {
        cfg.split.test_fraction = f;
    }
    if let Some(s) = args.seed {
        cfg.split.seed = s;
    }
    let index = scan_corpus(&args.corpus, &cfg.split)?;
    let train_u = extract_features(&index.train, &cfg.features)?;
    let test_u = extract_features(&index.test, &cfg.features)?;
    std::fs::create_dir_all(&args.out)?;
    save_utterances(&args.out.join("train.features"), &train_u, &cfg.features)?;
    save_utterances(&args.out.join("test.features"), &test_u, &cfg.features)?;
    let ids = |u: &[Utterance]| -> Vec<String> { u.iter().map(|u| u.id.clone()).collect() };
    let (tr, te) = (ids(&train_u), ids(&test_u));
    write_json(
        &args.out.join("split.json"),
        &SplitRecord {
            train: tr.iter().map(String::as_str).collect(),
            test: te.iter().map(String::as_str).collect(),
            config: &cfg,
        },
    )?;
    log::info!("prepared {} train and {} test utterances", train_u.len(), test_u.len());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with the corpus description; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub contents: Option<usize>,
    #[arg(long)]
    pub pitch_patterns: Option<usize>,
    #[arg(long)]
    pub rhythm_patterns: Option<usize>,
    #[arg(long)]
    pub per_cell: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_gen_synthetic(args: &GenSyntheticArgs) -> Result<SyntheticSpec> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(p) => read_toml(p)?,
        None => SyntheticSpec::default(),
    };
    let overrides = [
        (&mut spec.n_speakers, args.speakers),
        (&mut spec.n_contents, args.contents),
        (&mut spec.pitch_patterns, args.pitch_patterns),
        (&mut spec.rhythm_patterns, args.rhythm_patterns),
        (&mut spec.utterances_per_cell, args.per_cell),
    ];
    for (field, v) in overrides {
        if let Some(v) = v {
            *field = v;
        }
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let corpus = generate_synthetic(&spec)?;
    corpus.write(&args.out)?;
    write_json(&args.out.join("synthetic.json"), &spec)?;
    log::info!("wrote {} synthetic utterances", corpus.utterances.len());
    Ok(spec)
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Prepared training features.
    #[arg(long)]
    pub features: PathBuf,
    /// Output directory for `model.ckpt`, `loss_history.csv` and `train.toml`.
    #[arg(long)]
    pub out: PathBuf,
    /// Training TOML (`steps`, `seed`, `[objective]`, `[optimizer]`, `[pairing]`, `[model]`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cycle-loss weight; `0` trains the plain bottleneck baseline.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Held-out features for a final reconstruction-error summary.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub alpha: f64,
    pub first: Option<cycleflow::training::LossBreakdown>,
    pub last: Option<cycleflow::training::LossBreakdown>,
    pub heldout_reconstruction: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => TrainConfig::load(p).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", p.display())),
            other => other,
        })?,
        None => TrainConfig::default(),
    };
    if let Some(a) = args.alpha {
        cfg.objective.alpha = a;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let (utts, features) = load_utterances(&args.features)?;
    cfg.model.features = features;
    cfg.model.d_t = cfg.model.features.speaker_dim;
    cfg.validate()?;

    let state = match &args.resume {
        Some(p) => ModelState::load_expecting(p, &cfg.model)?,
        None => ModelState::new(cfg.model.clone())?,
    };
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("train.toml"), cfg.to_toml_string()?)?;
    let outcome = train(state, &utts, &cfg, Some(&args.out.join("checkpoints")))?;
    outcome.state.save(&args.out.join("model.ckpt"))?;
    outcome.history.write_csv(&args.out.join("loss_history.csv"))?;

    let heldout_reconstruction = match &args.heldout {
        Some(p) => Some(reconstruction_error(&outcome.state, &load_utterances(p)?.0)?),
        None => None,
    };
    let summary = TrainSummary {
        steps: cfg.steps,
        alpha: cfg.objective.alpha,
        first: outcome.history.first().copied(),
        last: outcome.history.last().copied(),
        heldout_reconstruction,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Args)]
pub struct EvalMiArgs {
    /// Evaluation features (normally the held-out split).
    #[arg(long)]
    pub features: PathBuf,
    /// One checkpoint for a single report, two for a comparison.
    #[arg(long = "checkpoint", required = true, num_args = 1..=2)]
    pub checkpoints: Vec<PathBuf>,
    /// Model names in the report; defaults to the checkpoint file stems.
    #[arg(long = "name")]
    pub names: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with `k`, `seeds` and `[kmeans]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated clustering seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

pub fn cmd_eval_mi(args: &EvalMiArgs) -> Result<Comparison> {
    let mut cfg: MIConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => MIConfig::default(),
    };
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if !args.names.is_empty() && args.names.len() != args.checkpoints.len() {
        return Err(Error::InvalidConfig("give one --name per --checkpoint".into()));
    }
    let (utts, features) = load_utterances(&args.features)?;
    let mut reports = Vec::new();
    for (i, path) in args.checkpoints.iter().enumerate() {
        let state = ModelState::load(path)?;
        if state.config.features != features {
            return Err(Error::ConfigMismatch(format!(
                "{} was trained with different feature settings than {}",
                path.display(),
                args.features.display()
            )));
        }
        let name = args.names.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("model{i}"))
        });
        reports.push(mi_report(&state, &name, &utts, &cfg)?);
    }
    let b = reports.pop().expect("at least one checkpoint");
    let a = reports.pop().unwrap_or_else(|| b.clone());
    let cmp = Comparison::from_reports(a, b);

    std::fs::create_dir_all(&args.out)?;
    let csv = if args.checkpoints.len() == 1 { cmp.b.to_csv() } else { cmp.to_csv() };
    std::fs::write(args.out.join("mi_report.csv"), csv)?;
    if args.checkpoints.len() == 1 {
        std::fs::write(args.out.join("mi_report.json"), cmp.b.to_json()? + "\n")?;
    } else {
        std::fs::write(args.out.join("mi_report.json"), cmp.to_json()? + "\n")?;
        std::fs::write(args.out.join("mi_table.txt"), cmp.to_table())?;
    }
    Ok(cmp)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(&a).map(|_| ()),
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            if let Some(l) = s.last {
                println!("trained {} steps: rec {:.6} cyc {:.6} total {:.6}", s.steps, l.rec, l.cyc, l.total);
            }
            if let Some(h) = s.heldout_reconstruction {
                println!("held-out reconstruction {h:.6}");
            }
            Ok(())
        }
        Command::EvalMi(a) => {
            let cmp = cmd_eval_mi(&a)?;
            if a.checkpoints.len() == 2 {
                print!("{}", cmp.to_table());
            } else {
                for (pair, v) in cmp.b.means() {
                    println!("{pair:<10}{v:>10.4}");
                }
            }
            Ok(())
        }
        Command::Convert(a) => cmd_convert(&a).map(|_| ()),
        Command::Edit(a) => cmd_edit(&a).map(|_| ()),
    }
}
