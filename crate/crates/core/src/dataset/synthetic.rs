use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::signal::{save_wav, SpectrogramConfig, Waveform, SAMPLE_RATE};
use crate::{Error, Result};

/// Full-factorial synthetic corpus description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_contents: usize,
    pub pitch_patterns: usize,
    pub rhythm_patterns: usize,
    pub utterances_per_cell: usize,
    pub seed: u64,
    /// Frames per utterance under the default spectrogram framing.
    pub frames: usize,
    /// Vowel-like segments per utterance.
    pub phones: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            n_contents: 4,
            pitch_patterns: 2,
            rhythm_patterns: 2,
            utterances_per_cell: 1,
            seed: 0,
            frames: 64,
            phones: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn new(
        n_speakers: usize,
        n_contents: usize,
        pitch_patterns: usize,
        rhythm_patterns: usize,
        utterances_per_cell: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_speakers,
            n_contents,
            pitch_patterns,
            rhythm_patterns,
            utterances_per_cell,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_speakers", self.n_speakers),
            ("n_contents", self.n_contents),
            ("pitch_patterns", self.pitch_patterns),
            ("rhythm_patterns", self.rhythm_patterns),
        ];
        for (name, v) in counts {
            if v < 2 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 2, got {v}")));
            }
        }
        if self.utterances_per_cell == 0 {
            return Err(Error::InvalidConfig("utterances_per_cell must be at least 1".into()));
        }
        if self.phones < 2 || self.frames < self.phones * 4 + 8 {
            return Err(Error::InvalidConfig(format!(
                "{} frames cannot hold {} phones",
                self.frames, self.phones
            )));
        }
        Ok(())
    }

    pub fn total_utterances(&self) -> usize {
        self.n_speakers * self.n_contents * self.pitch_patterns * self.rhythm_patterns * self.utterances_per_cell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorLabels {
    pub speaker: usize,
    pub content: usize,
    pub pitch: usize,
    pub rhythm: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker_id: String,
    pub labels: FactorLabels,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub utterances: Vec<SyntheticUtterance>,
}

/// Formant frequencies (Hz) of the vowel inventory.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [390.0, 1990.0, 2550.0],
];
const FORMANT_BW: [f64; 3] = [90.0, 110.0, 150.0];
const FORMANT_GAIN: [f64; 3] = [1.0, 0.6, 0.3];

fn sub_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

struct Timbre {
    formant_scale: f64,
    tilt: f64,
    resonance_hz: f64,
    resonance_gain: f64,
}

struct PitchShape {
    start: f64,
    end: f64,
    curve: f64,
}

fn content_sequences(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = sub_rng(spec.seed, 1, 0);
    let mut out: Vec<Vec<usize>> = Vec::new();
    while out.len() < spec.n_contents {
        let mut seq = Vec::with_capacity(spec.phones);
        while seq.len() < spec.phones {
            let v = rng.random_range(0..VOWELS.len());
            if seq.last() != Some(&v) {
                seq.push(v);
            }
        }
        if !out.contains(&seq) {
            out.push(seq);
        }
    }
    out
}

/// Relative phone durations plus leading/trailing silence fractions.
fn rhythm_patterns(spec: &SyntheticSpec) -> Vec<(Vec<f64>, f64, f64)> {
    (0..spec.rhythm_patterns)
        .map(|r| {
            let mut rng = sub_rng(spec.seed, 2, r as u64);
            let weights = (0..spec.phones).map(|_| rng.random_range(0.4..1.8)).collect();
            (weights, rng.random_range(0.04..0.2), rng.random_range(0.04..0.2))
        })
        .collect()
}

fn pitch_shapes(spec: &SyntheticSpec) -> Vec<PitchShape> {
    (0..spec.pitch_patterns)
        .map(|p| {
            let mut rng = sub_rng(spec.seed, 3, p as u64);
            let lo = rng.random_range(95.0..130.0);
            let hi = lo * rng.random_range(1.5..1.9);
            let (start, end) = if p % 2 == 0 { (lo, hi) } else { (hi, lo) };
            PitchShape {
                start,
                end,
                curve: rng.random_range(-0.8..0.8),
            }
        })
        .collect()
}

fn timbres(spec: &SyntheticSpec) -> Vec<Timbre> {
    let n = spec.n_speakers as f64;
    (0..spec.n_speakers)
        .map(|s| {
            let mut rng = sub_rng(spec.seed, 4, s as u64);
            let pos = (s as f64 + rng.random_range(0.4..0.6)) / n;
            let spread = (s as f64 * 0.618_034 + rng.random_range(0.0..0.05)) % 1.0;
            Timbre {
                formant_scale: 0.82 + 0.4 * pos,
                tilt: 0.5 + 1.8 * spread,
                resonance_hz: 1800.0 + 3600.0 * pos,
                resonance_gain: rng.random_range(0.8..1.2),
            }
        })
        .collect()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

struct Plan<'a> {
    /// Phone boundaries in frame units; `phones + 1` entries.
    bounds: Vec<f64>,
    vowels: Vec<[f64; 3]>,
    pitch: &'a PitchShape,
    timbre: &'a Timbre,
    f0_jitter: f64,
}

impl Plan<'_> {
    fn amplitude(&self, u: f64) -> f64 {
        let (b0, bn) = (self.bounds[0], self.bounds[self.bounds.len() - 1]);
        smoothstep((u - b0) / 1.5 + 0.5) * smoothstep((bn - u) / 1.5 + 0.5)
    }

    fn f0(&self, u: f64) -> f64 {
        let (b0, bn) = (self.bounds[0], self.bounds[self.bounds.len() - 1]);
        let x = ((u - b0) / (bn - b0)).clamp(0.0, 1.0);
        let shape = x + self.pitch.curve * x * (1.0 - x);
        (self.pitch.start + (self.pitch.end - self.pitch.start) * shape) * self.f0_jitter
    }

    fn formants(&self, u: f64) -> [f64; 3] {
        let n = self.vowels.len();
        let i = (1..n).take_while(|&i| self.bounds[i] <= u).count();
        let cur = self.vowels[i];
        // cross-fade one frame either side of the next boundary
        if i + 1 < n {
            let d = u - self.bounds[i + 1];
            if d > -1.0 {
                let w = smoothstep((d + 1.0) / 2.0);
                let next = self.vowels[i + 1];
                return std::array::from_fn(|k| cur[k] * (1.0 - w) + next[k] * w);
            }
        }
        if i > 0 {
            let d = u - self.bounds[i];
            if d < 1.0 {
                let w = smoothstep((d + 1.0) / 2.0);
                let prev = self.vowels[i - 1];
                return std::array::from_fn(|k| prev[k] * (1.0 - w) + cur[k] * w);
            }
        }
        cur
    }

    fn envelope(&self, f: f64, formants: &[f64; 3]) -> f64 {
        let t = self.timbre;
        let mut e = 0.01;
        for k in 0..3 {
            let x = (f - formants[k] * t.formant_scale) / FORMANT_BW[k];
            e += FORMANT_GAIN[k] / (1.0 + x * x);
        }
        let x = (f - t.resonance_hz) / 300.0;
        e += t.resonance_gain / (1.0 + x * x);
        e * (1.0 + f / 200.0).powf(-t.tilt)
    }
}

/// Harmonic-plus-envelope toy speech with ground-truth factor labels.
///
/// Content selects the vowel (formant) sequence, pitch the F0 trajectory,
/// rhythm the segment durations, and speaker a timbral filter (formant
/// scaling, spectral tilt and an extra resonance). Small per-utterance
/// jitter makes repeated cells differ. Deterministic given the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let frame_cfg = SpectrogramConfig::default();
    let (hop, win) = (frame_cfg.hop_len() as f64, frame_cfg.window_len() as f64);
    let n_samples = frame_cfg.samples_for_frames(spec.frames);

    let contents = content_sequences(spec);
    let rhythms = rhythm_patterns(spec);
    let pitches = pitch_shapes(spec);
    let timbres = timbres(spec);

    let mut utterances = Vec::with_capacity(spec.total_utterances());
    let mut index = 0u64;
    for speaker in 0..spec.n_speakers {
        for content in 0..spec.n_contents {
            for pitch in 0..spec.pitch_patterns {
                for rhythm in 0..spec.rhythm_patterns {
                    for rep in 0..spec.utterances_per_cell {
                        let mut rng = sub_rng(spec.seed, 5, index);
                        index += 1;

                        let (weights, lead, trail) = &rhythms[rhythm];
                        let frames = spec.frames as f64;
                        let start = frames * lead;
                        let span = frames * (1.0 - lead - trail);
                        let total: f64 = weights.iter().sum();
                        let mut bounds = vec![start];
                        let mut acc = start;
                        for w in weights {
                            acc += span * w / total;
                            bounds.push(acc);
                        }
                        for b in bounds.iter_mut().take(spec.phones).skip(1) {
                            *b += rng.random_range(-0.7..0.7);
                        }

                        let plan = Plan {
                            bounds,
                            vowels: contents[content].iter().map(|&v| VOWELS[v]).collect(),
                            pitch: &pitches[pitch],
                            timbre: &timbres[speaker],
                            f0_jitter: rng.random_range(0.97..1.03),
                        };
                        let gain = rng.random_range(0.35..0.5);
                        let samples = synthesize(&plan, n_samples, hop, win, &mut rng, gain);

                        let labels = FactorLabels {
                            speaker,
                            content,
                            pitch,
                            rhythm,
                        };
                        let speaker_id = format!("spk{speaker:02}");
                        utterances.push(SyntheticUtterance {
                            id: format!("{speaker_id}_c{content:02}_p{pitch:02}_r{rhythm:02}_u{rep:02}"),
                            speaker_id,
                            labels,
                            waveform: Waveform::new(samples, SAMPLE_RATE)?,
                        });
                    }
                }
            }
        }
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        utterances,
    })
}

fn synthesize(plan: &Plan, n: usize, hop: f64, win: f64, rng: &mut ChaCha8Rng, gain: f64) -> Vec<f64> {
    const BLOCK: usize = 16;
    let nyquist_guard = 7800.0;
    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    for block in (0..n).step_by(BLOCK) {
        let u = (block as f64 + BLOCK as f64 / 2.0 - win / 2.0) / hop;
        let amp = plan.amplitude(u);
        let f0 = plan.f0(u);
        let formants = plan.formants(u);
        amps.clear();
        let mut k = 1;
        while (k as f64) * f0 < nyquist_guard {
            amps.push(plan.envelope(k as f64 * f0, &formants));
            k += 1;
        }
        for s in out.iter_mut().skip(block).take(BLOCK) {
            phase = (phase + TAU * f0 / SAMPLE_RATE as f64) % TAU;
            if amp > 1e-6 {
                *s = amp * amps.iter().enumerate().map(|(i, a)| a * ((i + 1) as f64 * phase).sin()).sum::<f64>();
            }
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for s in &mut out {
        *s = *s / peak * gain + rng.random_range(-1e-4..1e-4);
    }
    out
}

impl SyntheticCorpus {
    /// Writes `<root>/<speaker>/<utt>.wav` plus `<root>/labels.csv`.
    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        let mut csv = std::fs::File::create(root.join("labels.csv"))?;
        writeln!(csv, "utt_id,speaker,content,pitch,rhythm")?;
        for u in &self.utterances {
            let dir = root.join(&u.speaker_id);
            std::fs::create_dir_all(&dir)?;
            save_wav(&u.waveform, &dir.join(format!("{}.wav", u.id)))?;
            let l = u.labels;
            writeln!(csv, "{},{},{},{},{}", u.id, l.speaker, l.content, l.pitch, l.rhythm)?;
        }
        Ok(())
    }

    pub fn labels_of(&self, id: &str) -> Option<FactorLabels> {
        self.utterances.iter().find(|u| u.id == id).map(|u| u.labels)
    }
}
