use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Spectrogram, SpectrogramConfig, Waveform};
use crate::autodiff::Mat;
use crate::{Error, Result};

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters with area normalization.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x n_fft_bins`
    pub weights: Mat,
    /// Center frequency of each band in Hz.
    pub centers: Vec<f64>,
}

pub fn mel_filterbank(config: &SpectrogramConfig) -> MelFilterbank {
    let n_bins = config.n_fft_bins();
    let n_fft = config.window_len();
    let sr = config.sample_rate as f64;
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();

    let mut weights = Mat::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[[m, k]] = w * norm;
        }
    }
    MelFilterbank {
        weights,
        centers: edges[1..=config.n_mels].to_vec(),
    }
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub(crate) struct Stft {
    window: Vec<f64>,
    hop: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub(crate) fn new(config: &SpectrogramConfig) -> Self {
        let n = config.window_len();
        let mut planner = FftPlanner::new();
        Self {
            window: hann(n),
            hop: config.hop_len(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub(crate) fn n_fft(&self) -> usize {
        self.window.len()
    }

    /// Complex spectra of each full frame; only the non-negative bins are kept.
    pub(crate) fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = self.n_fft();
        let n_bins = n / 2 + 1;
        if x.len() < n {
            return Vec::new();
        }
        let frames = (x.len() - n) / self.hop + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        (0..frames)
            .map(|t| {
                let seg = &x[t * self.hop..t * self.hop + n];
                for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                    *b = Complex::new(s * w, 0.0);
                }
                self.forward.process(&mut buf);
                buf[..n_bins].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add resynthesis of `len` samples from half spectra.
    pub(crate) fn synthesize(&self, spectra: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let n = self.n_fft();
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (t, half) in spectra.iter().enumerate() {
            buf[..half.len()].copy_from_slice(half);
            for k in half.len()..n {
                buf[k] = half[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                if start + i >= len {
                    break;
                }
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        for (o, &z) in out.iter_mut().zip(&norm) {
            if z > 1e-8 {
                *o /= z;
            }
        }
        out
    }
}

/// Magnitude mel energies (`T x n_mels`) before log compression.
pub(crate) fn mel_magnitudes(samples: &[f64], config: &SpectrogramConfig) -> Mat {
    let stft = Stft::new(config);
    let fb = mel_filterbank(config);
    let spectra = stft.analyze(samples);
    let mags = Mat::from_shape_fn((spectra.len(), config.n_fft_bins()), |(t, k)| spectra[t][k].norm());
    mags.dot(&fb.weights.t())
}

pub(crate) fn normalize_db(mel: f64, config: &SpectrogramConfig) -> f64 {
    let floor = 10f64.powf(config.min_db / 20.0);
    let db = 20.0 * mel.max(floor).log10() - config.ref_db;
    ((db - config.min_db) / -config.min_db).clamp(0.0, 1.0)
}

pub(crate) fn denormalize_db(v: f64, config: &SpectrogramConfig) -> f64 {
    let db = v * -config.min_db + config.min_db + config.ref_db;
    10f64.powf(db / 20.0)
}

/// Log-mel spectrogram: `floor((len - window) / hop) + 1` frames, values in
/// `[0, 1]` with `0` at the log floor.
pub fn compute_spectrogram(w: &Waveform, config: &SpectrogramConfig) -> Result<Spectrogram> {
    config.validate()?;
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    if w.len() < config.window_len() {
        return Err(Error::TooShort {
            len: w.len(),
            window: config.window_len(),
        });
    }
    let frames = mel_magnitudes(&w.samples, config).mapv(|m| normalize_db(m, config));
    Spectrogram::new(frames, config.clone())
}
