use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use crate::signal::MAX_CROP_FRAMES;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropPolicy {
    /// Uniformly random window (training).
    Random,
    /// Centered window (evaluation).
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub batch_size: usize,
    pub crop_frames: usize,
    pub crop: CropPolicy,
    /// Only pair utterances of different speakers.
    pub cross_speaker_only: bool,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            crop_frames: MAX_CROP_FRAMES,
            crop: CropPolicy::Random,
            cross_speaker_only: false,
        }
    }
}

/// Utterance pairs cropped or padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(Utterance, Utterance)>,
    pub frames: usize,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Endless deterministic stream of [`PairBatch`]es.
pub struct PairStream<'a> {
    utterances: &'a [Utterance],
    cfg: PairingConfig,
    rng: ChaCha8Rng,
}

/// Uniform random pairing without self-pairs.
pub fn pair_batches<'a>(utterances: &'a [Utterance], cfg: &PairingConfig, seed: u64) -> Result<PairStream<'a>> {
    if utterances.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pairing needs at least 2 utterances, got {}",
            utterances.len()
        )));
    }
    if cfg.crop_frames == 0 || cfg.crop_frames > MAX_CROP_FRAMES {
        return Err(Error::InvalidConfig(format!(
            "crop_frames must be in 1..={MAX_CROP_FRAMES}, got {}",
            cfg.crop_frames
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if cfg.cross_speaker_only && utterances.iter().all(|u| u.speaker_id == utterances[0].speaker_id) {
        return Err(Error::InsufficientData("cross-speaker pairing needs two speakers".into()));
    }
    Ok(PairStream {
        utterances,
        cfg: cfg.clone(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

pub(crate) fn crop_start(n_frames: usize, len: usize, policy: CropPolicy, rng: &mut impl Rng) -> usize {
    if n_frames <= len {
        return 0;
    }
    match policy {
        CropPolicy::Random => rng.random_range(0..=n_frames - len),
        CropPolicy::Center => (n_frames - len) / 2,
    }
}

impl PairStream<'_> {
    fn crop(&mut self, u: &Utterance) -> Utterance {
        let len = self.cfg.crop_frames;
        let start = crop_start(u.n_frames(), len, self.cfg.crop, &mut self.rng);
        u.crop(start, len)
    }

    fn draw_pair(&mut self) -> (usize, usize) {
        let n = self.utterances.len();
        loop {
            let a = self.rng.random_range(0..n);
            let mut b = self.rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            if !self.cfg.cross_speaker_only || self.utterances[a].speaker_id != self.utterances[b].speaker_id {
                return (a, b);
            }
        }
    }
}

impl Iterator for PairStream<'_> {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        let mut pairs = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let (a, b) = self.draw_pair();
            let ua = self.crop(&self.utterances[a]);
            let ub = self.crop(&self.utterances[b]);
            pairs.push((ua, ub));
        }
        Some(PairBatch {
            pairs,
            frames: self.cfg.crop_frames,
        })
    }
}
