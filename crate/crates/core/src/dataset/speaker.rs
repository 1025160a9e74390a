use std::collections::HashMap;
use std::f64::consts::PI;

use crate::autodiff::{Mat, Tape, Var};
use crate::signal::Spectrogram;
use crate::{Error, Result};

/// Unit-norm continuous speaker embedding used as the timbre factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVector(Vec<f64>);

impl SpeakerVector {
    /// Normalizes `v` to unit length.
    pub fn from_raw(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::EmptyInput("speaker vector"));
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::NonFinite("speaker vector norm"));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    /// Wraps an already normalized vector as-is.
    pub(crate) fn from_normalized(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.0.len()), self.0.clone()).expect("row shape")
    }

    pub fn cosine(&self, other: &SpeakerVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Source of speaker vectors.
pub trait SpeakerEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embedding for `speaker` given all of that speaker's spectrograms.
    fn embed(&self, speaker: &str, spectrograms: &[&Spectrogram]) -> Result<SpeakerVector>;
}

/// Long-term average spectrum embedder.
///
/// The mean log-mel frame over all of a speaker's audio is projected onto
/// DCT-II basis vectors `1..=dim` (the constant term is dropped, so overall
/// loudness and silence do not matter), liftered by `k` so spectral tilt
/// does not dominate, and normalized to unit length.
#[derive(Debug, Clone)]
pub struct LtasEmbedder {
    dim: usize,
    n_bands: usize,
    basis: Mat,
}

const NORM_EPS: f64 = 1e-12;

impl LtasEmbedder {
    pub fn new(n_bands: usize, dim: usize) -> Self {
        let basis = Mat::from_shape_fn((n_bands, dim), |(b, k)| {
            let k = (k + 1) as f64;
            k * (PI * k * (b as f64 + 0.5) / n_bands as f64).cos()
        });
        Self {
            dim,
            n_bands,
            basis,
        }
    }

    fn check(&self, s: &Spectrogram) -> Result<()> {
        if s.n_bands() != self.n_bands {
            return Err(Error::ShapeMismatch {
                context: "speaker embedder bands",
                expected: self.n_bands.to_string(),
                got: s.n_bands().to_string(),
            });
        }
        Ok(())
    }

    /// The same statistic computed on the tape for a single `T x B`
    /// spectrogram, so gradients flow back into the spectrogram.
    pub fn embed_var(&self, tape: &mut Tape, spec: Var) -> Var {
        let mean = tape.mean_rows(spec);
        let basis = tape.constant(self.basis.clone());
        let proj = tape.matmul(mean, basis);
        tape.l2_normalize_rows(proj, NORM_EPS)
    }
}

impl SpeakerEmbedder for LtasEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _speaker: &str, spectrograms: &[&Spectrogram]) -> Result<SpeakerVector> {
        let mut sum = ndarray::Array1::<f64>::zeros(self.n_bands);
        let mut frames = 0usize;
        for s in spectrograms {
            self.check(s)?;
            for row in s.frames.rows() {
                sum += &row;
                frames += 1;
            }
        }
        if frames == 0 {
            return Err(Error::EmptyInput("speaker spectrograms"));
        }
        let mean = sum / frames as f64;
        let proj = mean.dot(&self.basis);
        let n = (proj.dot(&proj) + NORM_EPS).sqrt();
        Ok(SpeakerVector::from_normalized(proj.iter().map(|v| v / n).collect()))
    }
}

/// Externally supplied embeddings looked up by speaker id.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    dim: usize,
    vectors: HashMap<String, SpeakerVector>,
}

impl ExternalEmbeddings {
    pub fn new(vectors: HashMap<String, SpeakerVector>) -> Result<Self> {
        let dim = vectors.values().next().map(SpeakerVector::dim).unwrap_or(0);
        if vectors.values().any(|v| v.dim() != dim) {
            return Err(Error::InvalidConfig("external speaker vectors differ in dimension".into()));
        }
        Ok(Self { dim, vectors })
    }
}

impl SpeakerEmbedder for ExternalEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, speaker: &str, _spectrograms: &[&Spectrogram]) -> Result<SpeakerVector> {
        self.vectors
            .get(speaker)
            .cloned()
            .ok_or_else(|| Error::Corpus(format!("no external embedding for speaker `{speaker}`")))
    }
}

/// Speaker vector from all utterances of one speaker with the default embedder.
pub fn make_speaker_vector(spectrograms: &[&Spectrogram], dim: usize) -> Result<SpeakerVector> {
    let bands = spectrograms
        .first()
        .ok_or(Error::EmptyInput("speaker utterances"))?
        .n_bands();
    LtasEmbedder::new(bands, dim).embed("", spectrograms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectrogramConfig;

    fn spec(f: impl Fn(usize, usize) -> f64) -> Spectrogram {
        Spectrogram::new(Mat::from_shape_fn((10, 80), |(t, b)| f(t, b)), SpectrogramConfig::default()).unwrap()
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let a = spec(|t, b| ((t + 2 * b) % 7) as f64 / 7.0);
        let v1 = make_speaker_vector(&[&a], 16).unwrap();
        let v2 = make_speaker_vector(&[&a], 16).unwrap();
        assert_eq!(v1, v2);
        let n: f64 = v1.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(v1.dim(), 16);
    }

    #[test]
    fn tape_statistic_matches_plain_one() {
        let a = spec(|t, b| ((t * 3 + b) % 11) as f64 / 11.0);
        let e = LtasEmbedder::new(80, 16);
        let plain = e.embed("x", &[&a]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(a.frames.clone());
        let out = e.embed_var(&mut tape, v);
        for (x, y) in tape.value(out).iter().zip(plain.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_does_not_change_the_vector() {
        let a = spec(|_, b| b as f64 / 80.0);
        let mut padded = a.frames.clone().into_raw_vec_and_offset().0;
        padded.extend(std::iter::repeat_n(0.0, 5 * 80));
        let b = Spectrogram::new(Mat::from_shape_vec((15, 80), padded).unwrap(), SpectrogramConfig::default()).unwrap();
        let va = make_speaker_vector(&[&a], 16).unwrap();
        let vb = make_speaker_vector(&[&b], 16).unwrap();
        assert!((va.cosine(&vb) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn external_lookup() {
        let mut m = HashMap::new();
        m.insert("p1".to_string(), SpeakerVector::from_raw(vec![3.0, 4.0]).unwrap());
        let ext = ExternalEmbeddings::new(m).unwrap();
        assert_eq!(ext.embed("p1", &[]).unwrap().as_slice(), &[0.6, 0.8]);
        assert!(ext.embed("p2", &[]).is_err());
    }
}
