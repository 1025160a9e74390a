//! Factor-swap conversion and constant-factor editing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use cycleflow::autodiff::{Mat, TimeMap};
use cycleflow::dataset::{load_utterances, make_speaker_vector};
use cycleflow::model::{decode, encode, Factor, FactorSet, ModelState};
use cycleflow::signal::{compute_spectrogram, extract_pitch, invert_spectrogram, load_audio, save_wav, InversionConfig};
use cycleflow::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Args)]
pub struct InversionArgs {
    /// Griffin-Lim iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Seed of the initial phase.
    #[arg(long)]
    pub phase_seed: Option<u64>,
}

impl InversionArgs {
    fn resolve(&self) -> InversionConfig {
        let mut c = InversionConfig::default();
        if let Some(i) = self.iterations {
            c.iterations = i;
        }
        if let Some(s) = self.phase_seed {
            c.phase_seed = s;
        }
        c
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Utterance whose remaining factors are kept.
    #[arg(long)]
    pub source: PathBuf,
    /// Utterance that donates the swapped factors.
    #[arg(long)]
    pub target: PathBuf,
    /// Comma-separated factors taken from the target, e.g. `rhythm,pitch`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub swap: Vec<Factor>,
    /// Output WAV; the sidecar is written next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantPolicy {
    Zeros,
    CorpusMean,
    Reference,
}

#[derive(Debug, Clone, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated factors replaced by constants, e.g. `content,timbre`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub freeze: Vec<Factor>,
    #[arg(long, value_enum, default_value = "corpus-mean")]
    pub policy: ConstantPolicy,
    /// Prepared features whose mean codes feed the `corpus-mean` policy.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Utterance whose codes feed the `reference` policy.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

/// A validated conversion request.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertRequest {
    pub source: PathBuf,
    pub target: PathBuf,
    pub swap: Vec<Factor>,
    pub out: PathBuf,
}

impl ConvertRequest {
    pub fn new(source: PathBuf, target: PathBuf, swap: &[Factor], out: PathBuf) -> Result<Self> {
        let swap = factor_set(swap);
        if swap.is_empty() {
            return Err(Error::InvalidConfig("the swap set must name at least one factor".into()));
        }
        if source == target {
            return Err(Error::InvalidConfig("source and target must be different utterances".into()));
        }
        Ok(Self { source, target, swap, out })
    }
}

/// A validated editing request.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub input: PathBuf,
    pub frozen: Vec<Factor>,
    pub policy: ConstantPolicy,
    pub features: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
}

impl EditRequest {
    pub fn new(
        input: PathBuf,
        frozen: &[Factor],
        policy: ConstantPolicy,
        features: Option<PathBuf>,
        reference: Option<PathBuf>,
        out: PathBuf,
    ) -> Result<Self> {
        let frozen = factor_set(frozen);
        if frozen.is_empty() {
            return Err(Error::InvalidConfig("the frozen set must name at least one factor".into()));
        }
        match policy {
            ConstantPolicy::CorpusMean if features.is_none() => {
                return Err(Error::InvalidConfig("the corpus-mean policy needs --features".into()))
            }
            ConstantPolicy::Reference if reference.is_none() => {
                return Err(Error::InvalidConfig("the reference policy needs --reference".into()))
            }
            _ => {}
        }
        Ok(Self {
            input,
            frozen,
            policy,
            features,
            reference,
            out,
        })
    }
}

fn factor_set(fs: &[Factor]) -> Vec<Factor> {
    let mut v = fs.to_vec();
    v.sort();
    v.dedup();
    v
}

/// How an incoming factor was stretched to the receiving utterance's length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub from_codes: usize,
    pub to_codes: usize,
}

/// Everything needed to regenerate a WAV written by `convert` or `edit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub command: String,
    pub checkpoint: PathBuf,
    pub checkpoint_step: u64,
    pub inputs: BTreeMap<String, PathBuf>,
    pub factors: Vec<Factor>,
    pub policy: Option<ConstantPolicy>,
    /// Linear resampling applied per factor when lengths differed.
    pub reconciliation: BTreeMap<String, Reconciliation>,
    pub inversion: InversionConfig,
    pub sample_rate: u32,
    pub samples: usize,
}

/// Linearly resamples the codes of a sequence factor to `codes` rows.
pub fn reconcile_length(m: &Mat, codes: usize) -> Mat {
    if m.nrows() == codes {
        return m.clone();
    }
    TimeMap::linear(m.nrows(), codes).apply(m)
}

/// Encodes a WAV with the model's feature settings; timbre comes from the
/// utterance's own long-term spectrum.
fn encode_wav(state: &ModelState, path: &Path) -> Result<FactorSet> {
    let f = &state.config.features;
    let w = load_audio(path)?;
    let spec = compute_spectrogram(&w, &f.spectrogram)?;
    let pitch = extract_pitch(&w, &f.spectrogram, &f.pitch)?;
    let v = make_speaker_vector(&[&spec], f.speaker_dim)?;
    encode(state, &spec, &pitch, &v, None)
}

/// Copies `f` from `donor` into `z`, stretching sequence factors as needed.
fn substitute(z: &mut FactorSet, f: Factor, donor: &Mat, log: &mut BTreeMap<String, Reconciliation>) {
    let cur = z.get(f).nrows();
    let m = if f == Factor::Timbre {
        donor.clone()
    } else {
        if donor.nrows() != cur {
            log.insert(
                f.name().to_string(),
                Reconciliation {
                    from_codes: donor.nrows(),
                    to_codes: cur,
                },
            );
        }
        reconcile_length(donor, cur)
    };
    *z.get_mut(f) = m;
}

fn render(state: &ModelState, z: &FactorSet, inv: &InversionConfig, out: &Path, mut sidecar: Sidecar) -> Result<Sidecar> {
    let spec = decode(state, z)?;
    let wav = invert_spectrogram(&spec, inv)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_wav(&wav, out)?;
    sidecar.sample_rate = wav.sample_rate;
    sidecar.samples = wav.len();
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(out.with_extension("json"), text)?;
    Ok(sidecar)
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<Sidecar> {
    let req = ConvertRequest::new(args.source.clone(), args.target.clone(), &args.swap, args.out.clone())?;
    let inv = args.inversion.resolve();
    let state = ModelState::load(&args.checkpoint)?;
    let mut z = encode_wav(&state, &req.source)?;
    let donor = encode_wav(&state, &req.target)?;
    let mut rec = BTreeMap::new();
    for &f in &req.swap {
        substitute(&mut z, f, donor.get(f), &mut rec);
    }
    let sidecar = Sidecar {
        command: "convert".into(),
        checkpoint: args.checkpoint.clone(),
        checkpoint_step: state.step,
        inputs: BTreeMap::from([("source".into(), req.source.clone()), ("target".into(), req.target.clone())]),
        factors: req.swap.clone(),
        policy: None,
        reconciliation: rec,
        inversion: inv.clone(),
        sample_rate: 0,
        samples: 0,
    };
    render(&state, &z, &inv, &req.out, sidecar)
}

/// Mean code row of every factor over all utterances of a features file.
fn corpus_mean(state: &ModelState, path: &Path) -> Result<FactorSet> {
    let (utts, features) = load_utterances(path)?;
    if features != state.config.features {
        return Err(Error::ConfigMismatch(format!(
            "{} uses different feature settings than the checkpoint",
            path.display()
        )));
    }
    if utts.is_empty() {
        return Err(Error::EmptyInput("corpus for the mean factors"));
    }
    let mut sums: Option<(FactorSet, [usize; 4])> = None;
    for u in &utts {
        let z = encode(state, &u.spectrogram, &u.pitch, &u.speaker_vector, None)?;
        let (acc, counts) = sums.get_or_insert_with(|| {
            let mut zero = z.zeros_like();
            for f in Factor::ALL {
                *zero.get_mut(f) = Mat::zeros((1, z.get(f).ncols()));
            }
            (zero, [0; 4])
        });
        for (i, f) in Factor::ALL.into_iter().enumerate() {
            let m = z.get(f);
            let mut row = acc.get_mut(f).row_mut(0);
            row += &m.sum_axis(ndarray::Axis(0));
            counts[i] += m.nrows();
        }
    }
    let (mut mean, counts) = sums.expect("non-empty corpus");
    for (i, f) in Factor::ALL.into_iter().enumerate() {
        let m = mean.get_mut(f);
        *m /= counts[i].max(1) as f64;
    }
    Ok(mean)
}

pub fn cmd_edit(args: &EditArgs) -> Result<Sidecar> {
    let req = EditRequest::new(
        args.input.clone(),
        &args.freeze,
        args.policy,
        args.features.clone(),
        args.reference.clone(),
        args.out.clone(),
    )?;
    let inv = args.inversion.resolve();
    let state = ModelState::load(&args.checkpoint)?;
    let mut z = encode_wav(&state, &req.input)?;
    let mut inputs = BTreeMap::from([("input".to_string(), req.input.clone())]);
    let mut rec = BTreeMap::new();
    match req.policy {
        ConstantPolicy::Zeros => {
            for &f in &req.frozen {
                z.get_mut(f).fill(0.0);
            }
        }
        ConstantPolicy::CorpusMean => {
            let path = req.features.as_ref().expect("checked by EditRequest");
            let mean = corpus_mean(&state, path)?;
            for &f in &req.frozen {
                let rows = z.get(f).nrows();
                let row = mean.get(f).row(0).to_owned();
                *z.get_mut(f) = Mat::from_shape_fn((rows, row.len()), |(_, j)| row[j]);
            }
            inputs.insert("features".into(), path.clone());
        }
        ConstantPolicy::Reference => {
            let path = req.reference.as_ref().expect("checked by EditRequest");
            let donor = encode_wav(&state, path)?;
            for &f in &req.frozen {
                substitute(&mut z, f, donor.get(f), &mut rec);
            }
            inputs.insert("reference".into(), path.clone());
        }
    }
    let sidecar = Sidecar {
        command: "edit".into(),
        checkpoint: args.checkpoint.clone(),
        checkpoint_step: state.step,
        inputs,
        factors: req.frozen.clone(),
        policy: Some(req.policy),
        reconciliation: rec,
        inversion: inv.clone(),
        sample_rate: 0,
        samples: 0,
    };
    render(&state, &z, &inv, &req.out, sidecar)
}
