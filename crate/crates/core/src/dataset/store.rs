use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{FeatureConfig, Utterance};
use super::speaker::SpeakerVector;
use crate::autodiff::Mat;
use crate::container::TensorFile;
use crate::signal::{PitchContour, Spectrogram};
use crate::{Error, Result};

const KIND: &str = "features";

#[derive(Serialize, Deserialize)]
struct Entry {
    id: String,
    speaker_id: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    features: FeatureConfig,
    utterances: Vec<Entry>,
}

/// Writes analyzed utterances and the settings that produced them.
pub fn save_utterances(path: &Path, utterances: &[Utterance], cfg: &FeatureConfig) -> Result<()> {
    let mut tensors = Vec::with_capacity(3 * utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        let pitch = Mat::from_shape_fn((u.pitch.len(), 2), |(t, c)| {
            if c == 0 {
                u.pitch.f0[t]
            } else if u.pitch.voiced[t] {
                1.0
            } else {
                0.0
            }
        });
        tensors.push((format!("{i}.spectrogram"), u.spectrogram.frames.clone()));
        tensors.push((format!("{i}.pitch"), pitch));
        tensors.push((format!("{i}.speaker"), u.speaker_vector.as_row()));
    }
    let meta = Meta {
        features: cfg.clone(),
        utterances: utterances
            .iter()
            .map(|u| Entry {
                id: u.id.clone(),
                speaker_id: u.speaker_id.clone(),
            })
            .collect(),
    };
    TensorFile {
        kind: KIND.into(),
        meta: serde_json::to_value(meta)?,
        tensors,
    }
    .write(path)
}

/// Reads a file written by [`save_utterances`].
pub fn load_utterances(path: &Path) -> Result<(Vec<Utterance>, FeatureConfig)> {
    let file = TensorFile::read(path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if file.kind != KIND {
        return Err(corrupt(format!("expected a features file, found `{}`", file.kind)));
    }
    let meta: Meta = serde_json::from_value(file.meta.clone()).map_err(|e| corrupt(e.to_string()))?;
    let get = |name: String| file.get(&name).ok_or_else(|| corrupt(format!("missing tensor `{name}`")));
    let mut out = Vec::with_capacity(meta.utterances.len());
    for (i, e) in meta.utterances.into_iter().enumerate() {
        let spectrogram = Spectrogram::new(get(format!("{i}.spectrogram"))?.clone(), meta.features.spectrogram.clone())?;
        let p = get(format!("{i}.pitch"))?;
        if p.ncols() != 2 || p.nrows() != spectrogram.n_frames() {
            return Err(corrupt(format!("pitch tensor of `{}` has shape {:?}", e.id, p.dim())));
        }
        let pitch = PitchContour {
            f0: p.column(0).to_vec(),
            voiced: p.column(1).iter().map(|&v| v > 0.5).collect(),
        };
        let speaker_vector = SpeakerVector::from_raw(get(format!("{i}.speaker"))?.iter().copied().collect())?;
        out.push(Utterance {
            id: e.id,
            speaker_id: e.speaker_id,
            spectrogram,
            pitch,
            speaker_vector,
        });
    }
    Ok((out, meta.features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectrogramConfig;

    #[test]
    fn round_trip() {
        let u = Utterance {
            id: "a".into(),
            speaker_id: "s".into(),
            spectrogram: Spectrogram::new(Mat::from_shape_fn((5, 80), |(t, b)| (t * b) as f64 / 400.0), SpectrogramConfig::default())
                .unwrap(),
            pitch: PitchContour {
                f0: vec![0.5, -0.25, 0.0, 0.0, 1.0],
                voiced: vec![true, true, false, false, true],
            },
            speaker_vector: SpeakerVector::from_raw(vec![0.6, 0.8]).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.features");
        let cfg = FeatureConfig::default();
        save_utterances(&path, std::slice::from_ref(&u), &cfg).unwrap();
        let (back, c) = load_utterances(&path).unwrap();
        assert_eq!(back, vec![u]);
        assert_eq!(c, cfg);
    }
}
