use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::speaker::{LtasEmbedder, SpeakerEmbedder, SpeakerVector};
use crate::signal::{compute_spectrogram, extract_pitch, load_audio, PitchConfig, PitchContour, Spectrogram, SpectrogramConfig, Waveform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceDescriptor {
    pub id: String,
    pub speaker_id: String,
    pub path: PathBuf,
}

/// Speaker-disjoint train/test split of a scanned corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    pub train: Vec<UtteranceDescriptor>,
    pub test: Vec<UtteranceDescriptor>,
}

impl CorpusIndex {
    pub fn all(&self) -> impl Iterator<Item = &UtteranceDescriptor> {
        self.train.iter().chain(&self.test)
    }

    pub fn speakers(list: &[UtteranceDescriptor]) -> Vec<String> {
        let mut s: Vec<String> = list.iter().map(|d| d.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of speakers held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Indexes `<root>/<speaker>/<utt>.wav` and splits speakers into disjoint
/// train and test sets. Files whose WAV header cannot be read are skipped
/// with a warning.
pub fn scan_corpus(root: &Path, split: &SplitConfig) -> Result<CorpusIndex> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    if !(0.0..1.0).contains(&split.test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in [0, 1), got {}",
            split.test_fraction
        )));
    }
    let mut by_speaker: BTreeMap<String, Vec<UtteranceDescriptor>> = BTreeMap::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let speaker = dir.file_name().unwrap().to_string_lossy().into_owned();
        let wavs: Vec<PathBuf> = sorted_entries(&dir)?.into_iter().filter(|p| is_wav(p)).collect();
        if wavs.is_empty() {
            continue;
        }
        let mut usable = Vec::new();
        for path in wavs {
            match hound::WavReader::open(&path) {
                Ok(r) if r.duration() > 0 => usable.push(UtteranceDescriptor {
                    id: path.file_stem().unwrap().to_string_lossy().into_owned(),
                    speaker_id: speaker.clone(),
                    path,
                }),
                Ok(_) => log::warn!("skipping empty file {}", path.display()),
                Err(e) => log::warn!("skipping unreadable file {}: {e}", path.display()),
            }
        }
        if usable.is_empty() {
            return Err(Error::Corpus(format!("speaker `{speaker}` has no usable files")));
        }
        by_speaker.insert(speaker, usable);
    }
    if by_speaker.is_empty() {
        return Err(Error::Corpus(format!("no WAV files under {}", root.display())));
    }

    let mut speakers: Vec<String> = by_speaker.keys().cloned().collect();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let n = speakers.len();
    let mut n_test = (n as f64 * split.test_fraction).round() as usize;
    if split.test_fraction > 0.0 && n >= 2 {
        n_test = n_test.max(1);
    }
    n_test = n_test.min(n - 1);
    let test_set: Vec<String> = speakers[..n_test].to_vec();

    let mut index = CorpusIndex {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (speaker, utts) in by_speaker {
        if test_set.contains(&speaker) {
            index.test.extend(utts);
        } else {
            index.train.extend(utts);
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub spectrogram: SpectrogramConfig,
    pub pitch: PitchConfig,
    pub speaker_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            spectrogram: SpectrogramConfig::default(),
            pitch: PitchConfig::default(),
            speaker_dim: 16,
        }
    }
}

impl FeatureConfig {
    pub fn embedder(&self) -> LtasEmbedder {
        LtasEmbedder::new(self.spectrogram.n_mels, self.speaker_dim)
    }
}

/// One analyzed utterance: model inputs plus the speaker's timbre vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub spectrogram: Spectrogram,
    pub pitch: PitchContour,
    pub speaker_vector: SpeakerVector,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.spectrogram.n_frames()
    }

    pub fn crop(&self, start: usize, len: usize) -> Self {
        Self {
            id: self.id.clone(),
            speaker_id: self.speaker_id.clone(),
            spectrogram: self.spectrogram.crop(start, len),
            pitch: self.pitch.crop(start, len),
            speaker_vector: self.speaker_vector.clone(),
        }
    }
}

/// Analyzes waveforms and attaches one speaker vector per speaker, computed
/// from all of that speaker's utterances in `items`.
pub fn build_utterances(
    items: Vec<(String, String, Waveform)>,
    cfg: &FeatureConfig,
    embedder: &dyn SpeakerEmbedder,
) -> Result<Vec<Utterance>> {
    let mut analyzed = Vec::with_capacity(items.len());
    for (id, speaker_id, w) in items {
        let spectrogram = compute_spectrogram(&w, &cfg.spectrogram)?;
        let pitch = extract_pitch(&w, &cfg.spectrogram, &cfg.pitch)?;
        analyzed.push((id, speaker_id, spectrogram, pitch));
    }
    let mut vectors: BTreeMap<String, SpeakerVector> = BTreeMap::new();
    let speakers: Vec<String> = {
        let mut s: Vec<String> = analyzed.iter().map(|a| a.1.clone()).collect();
        s.sort();
        s.dedup();
        s
    };
    for speaker in speakers {
        let specs: Vec<&Spectrogram> = analyzed.iter().filter(|a| a.1 == speaker).map(|a| &a.2).collect();
        let v = embedder.embed(&speaker, &specs)?;
        vectors.insert(speaker, v);
    }
    Ok(analyzed
        .into_iter()
        .map(|(id, speaker_id, spectrogram, pitch)| Utterance {
            speaker_vector: vectors[&speaker_id].clone(),
            id,
            speaker_id,
            spectrogram,
            pitch,
        })
        .collect())
}

/// Loads and analyzes indexed files with the default embedder.
pub fn extract_features(descs: &[UtteranceDescriptor], cfg: &FeatureConfig) -> Result<Vec<Utterance>> {
    let items = descs
        .iter()
        .map(|d| Ok((d.id.clone(), d.speaker_id.clone(), load_audio(&d.path)?)))
        .collect::<Result<Vec<_>>>()?;
    build_utterances(items, cfg, &cfg.embedder())
}
