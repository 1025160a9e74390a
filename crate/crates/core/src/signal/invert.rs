use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::mel::{denormalize_db, mel_filterbank, Stft};
use super::{Spectrogram, Waveform};
use crate::autodiff::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    /// Griffin-Lim phase-refinement iterations.
    pub iterations: usize,
    /// Multiplicative non-negative least-squares iterations for mel -> linear.
    pub nnls_iterations: usize,
    /// Seed of the initial phase draw.
    pub phase_seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            iterations: 32,
            nnls_iterations: 60,
            phase_seed: 0,
        }
    }
}

/// Non-negative linear magnitudes `X` with `X W^T ~= Y` for mel weights `W`.
fn mel_to_linear(mel: &Mat, weights: &Mat, iterations: usize) -> Mat {
    let target = mel.dot(weights); // T x K, W^T y per frame
    let mut x = target.mapv(|v| v.max(1e-12));
    for _ in 0..iterations {
        let denom = x.dot(&weights.t()).dot(weights);
        ndarray::Zip::from(&mut x)
            .and(&target)
            .and(&denom)
            .for_each(|x, &t, &d| *x *= t / (d + 1e-12));
    }
    x
}

/// Griffin-Lim reconstruction of a waveform from a log-mel spectrogram.
///
/// Deterministic for a fixed [`InversionConfig`].
pub fn invert_spectrogram(s: &Spectrogram, cfg: &InversionConfig) -> Result<Waveform> {
    if s.frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrogram"));
    }
    let config = &s.config;
    config.validate()?;
    let fb = mel_filterbank(config);
    let mel = s.frames.mapv(|v| if v <= 0.0 { 0.0 } else { denormalize_db(v.min(1.0), config) });
    let mags = mel_to_linear(&mel, &fb.weights, cfg.nnls_iterations);

    let stft = Stft::new(config);
    let len = config.samples_for_frames(s.n_frames());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.phase_seed);
    let mut phases: Vec<Vec<Complex<f64>>> = (0..s.n_frames())
        .map(|_| {
            (0..config.n_fft_bins())
                .map(|_| Complex::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();

    let build = |phases: &[Vec<Complex<f64>>]| -> Vec<Vec<Complex<f64>>> {
        phases
            .iter()
            .enumerate()
            .map(|(t, ph)| ph.iter().enumerate().map(|(k, p)| p * mags[[t, k]]).collect())
            .collect()
    };

    for _ in 0..cfg.iterations {
        let signal = stft.synthesize(&build(&phases), len);
        for (ph, spec) in phases.iter_mut().zip(stft.analyze(&signal)) {
            for (p, c) in ph.iter_mut().zip(spec) {
                let n = c.norm();
                *p = if n > 1e-12 { c / n } else { Complex::new(1.0, 0.0) };
            }
        }
    }
    let samples = stft
        .synthesize(&build(&phases), len)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Waveform::new(samples, config.sample_rate)
}

/// Root-mean-square difference of two spectrograms in dB over their common frames.
pub fn log_spectral_distance(a: &Spectrogram, b: &Spectrogram) -> f64 {
    let t = a.n_frames().min(b.n_frames());
    if t == 0 {
        return 0.0;
    }
    let sa = a.frames.slice(ndarray::s![..t, ..]);
    let sb = b.frames.slice(ndarray::s![..t, ..]);
    let mse = ndarray::Zip::from(&sa)
        .and(&sb)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
        / (t * a.n_bands()) as f64;
    mse.sqrt() * -a.config.min_db
}
