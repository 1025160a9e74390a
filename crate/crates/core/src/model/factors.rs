use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::{Error, Result};

/// One of the four speech factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Rhythm,
    Pitch,
    Content,
    Timbre,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Rhythm, Factor::Pitch, Factor::Content, Factor::Timbre];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Rhythm => "rhythm",
            Factor::Pitch => "pitch",
            Factor::Content => "content",
            Factor::Timbre => "timbre",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown factor `{s}` (expected rhythm, pitch, content or timbre)")))
    }
}

/// Encoded factors of one utterance.
///
/// Sequence factors are `codes x dim` at their own downsampled rate; timbre
/// is a single `1 x d_t` row. `frames` is the spectrogram length they decode to.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub rhythm: Mat,
    pub pitch: Mat,
    pub content: Mat,
    pub timbre: Mat,
    pub frames: usize,
}

impl FactorSet {
    pub fn get(&self, f: Factor) -> &Mat {
        match f {
            Factor::Rhythm => &self.rhythm,
            Factor::Pitch => &self.pitch,
            Factor::Content => &self.content,
            Factor::Timbre => &self.timbre,
        }
    }

    pub fn get_mut(&mut self, f: Factor) -> &mut Mat {
        match f {
            Factor::Rhythm => &mut self.rhythm,
            Factor::Pitch => &mut self.pitch,
            Factor::Content => &mut self.content,
            Factor::Timbre => &mut self.timbre,
        }
    }

    /// A copy with `f` taken from `donor`.
    pub fn with_factor(&self, f: Factor, donor: &FactorSet) -> FactorSet {
        let mut out = self.clone();
        *out.get_mut(f) = donor.get(f).clone();
        out
    }

    pub fn zeros_like(&self) -> FactorSet {
        FactorSet {
            rhythm: Mat::zeros(self.rhythm.dim()),
            pitch: Mat::zeros(self.pitch.dim()),
            content: Mat::zeros(self.content.dim()),
            timbre: Mat::zeros(self.timbre.dim()),
            frames: self.frames,
        }
    }

    pub fn is_finite(&self) -> bool {
        Factor::ALL.iter().all(|&f| self.get(f).iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &FactorSet) -> bool {
        self.frames == other.frames && Factor::ALL.iter().all(|&f| self.get(f).dim() == other.get(f).dim())
    }
}
