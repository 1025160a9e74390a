//! Audio I/O, mel spectrograms, pitch contours, random resampling and
//! Griffin-Lim inversion.

mod audio;
mod invert;
mod mel;
mod pitch;
mod resample;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::container::TensorFile;
use crate::{Error, Result};

pub use audio::{load_audio, resample_sinc, save_wav};
pub use invert::{invert_spectrogram, log_spectral_distance, InversionConfig};
pub use mel::{compute_spectrogram, mel_filterbank, MelFilterbank};
pub use pitch::{extract_pitch, pitch_surrogate, PitchConfig};
pub use resample::{random_resample, resample_plan, ResampleSpec};

/// Working sample rate for every waveform after loading.
pub const SAMPLE_RATE: u32 = 16_000;

/// Upper bound on frames in a training crop.
pub const MAX_CROP_FRAMES: usize = 192;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// STFT and mel analysis settings shared by spectrogram and pitch extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Values at or below this level (dB) map to the log floor `0.0`.
    pub min_db: f64,
    /// Reference level subtracted before normalization (dB).
    pub ref_db: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window_ms: 64.0,
            hop_ms: 16.0,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            min_db: -100.0,
            ref_db: 16.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_fft_bins(&self) -> usize {
        self.window_len() / 2 + 1
    }

    /// `floor((len - window) / hop) + 1`, or zero when shorter than a window.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let w = self.window_len();
        if n_samples < w {
            0
        } else {
            (n_samples - w) / self.hop_len() + 1
        }
    }

    /// Sample count whose analysis yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.window_len() + (frames - 1) * self.hop_len()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.window_len() < 4 || self.hop_len() == 0 {
            return bad("window and hop must be positive");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad("require 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.min_db >= 0.0 {
            return bad("min_db must be negative");
        }
        Ok(())
    }
}

/// Time-major mel spectrogram in normalized log scale: `0.0` is the log floor
/// and `1.0` is `ref_db` above full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Mat,
    pub config: SpectrogramConfig,
}

impl Spectrogram {
    pub fn new(frames: Mat, config: SpectrogramConfig) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        if frames.ncols() != config.n_mels {
            return Err(Error::ShapeMismatch {
                context: "spectrogram bands",
                expected: config.n_mels.to_string(),
                got: frames.ncols().to_string(),
            });
        }
        Ok(Self { frames, config })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.frames.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        TensorFile {
            kind: "spectrogram".into(),
            meta: serde_json::to_value(&self.config)?,
            tensors: vec![("frames".into(), self.frames.clone())],
        }
        .write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::read(path)?;
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        if file.kind != "spectrogram" {
            return Err(corrupt("not a spectrogram container"));
        }
        let config: SpectrogramConfig =
            serde_json::from_value(file.meta.clone()).map_err(|e| corrupt(&e.to_string()))?;
        let frames = file
            .get("frames")
            .ok_or_else(|| corrupt("missing frames tensor"))?
            .clone();
        Self::new(frames, config)
    }
}

/// Per-frame normalized log-F0 with a voicing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn unvoiced(n: usize) -> Self {
        Self {
            f0: vec![pitch::UNVOICED_FILL; n],
            voiced: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    /// The contour as a `T x 1` matrix, the pitch encoder input.
    pub fn as_column(&self) -> Mat {
        Mat::from_shape_vec((self.f0.len(), 1), self.f0.clone()).expect("column shape")
    }

    /// Frames `start..start + len`, padding with unvoiced frames past the end.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        let mut out = Self::unvoiced(len);
        for i in 0..len {
            if let (Some(&f), Some(&v)) = (self.f0.get(start + i), self.voiced.get(start + i)) {
                out.f0[i] = f;
                out.voiced[i] = v;
            }
        }
        out
    }
}

impl Spectrogram {
    /// Frames `start..start + len`, padding with floor frames past the end.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        let mut frames = Mat::zeros((len, self.n_bands()));
        let avail = self.n_frames().saturating_sub(start).min(len);
        if avail > 0 {
            frames
                .slice_mut(ndarray::s![..avail, ..])
                .assign(&self.frames.slice(ndarray::s![start..start + avail, ..]));
        }
        Self {
            frames,
            config: self.config.clone(),
        }
    }
}
