use serde::{Deserialize, Serialize};

use super::mel::mel_filterbank;
use super::{PitchContour, SpectrogramConfig, Waveform};
use crate::autodiff::{Mat, Tape, Var};
use crate::{Error, Result};

/// Value stored in unvoiced frames after normalization.
pub(crate) const UNVOICED_FILL: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Frames quieter than this RMS are unvoiced.
    pub min_rms: f64,
    /// The shortest lag whose peak reaches this fraction of the best peak
    /// wins, which suppresses period-doubling errors.
    pub octave_ratio: f64,
    /// Standard-deviation floor (log-F0 units) for per-utterance normalization.
    pub std_floor: f64,
    /// Softmax sharpness of the differentiable harmonic-sieve surrogate.
    pub surrogate_sharpness: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            fmin: 60.0,
            fmax: 400.0,
            voicing_threshold: 0.45,
            min_rms: 1e-3,
            octave_ratio: 0.9,
            std_floor: 0.01,
            surrogate_sharpness: 60.0,
        }
    }
}

/// Raw F0 in Hz per frame, `None` when unvoiced. Frames follow the
/// spectrogram framing of `config`.
pub(crate) fn track_f0(samples: &[f64], config: &SpectrogramConfig, pc: &PitchConfig) -> Vec<Option<f64>> {
    let n = config.window_len();
    let hop = config.hop_len();
    let sr = config.sample_rate as f64;
    let frames = config.frame_count(samples.len());
    let min_lag = (sr / pc.fmax).floor().max(2.0) as usize;
    let max_lag = ((sr / pc.fmin).ceil() as usize).min(n - 2);

    let mut frame = vec![0.0; n];
    let mut prefix = vec![0.0; n + 1];
    (0..frames)
        .map(|t| {
            let seg = &samples[t * hop..t * hop + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for (f, &s) in frame.iter_mut().zip(seg) {
                *f = s - mean;
            }
            let rms = (frame.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            if rms < pc.min_rms || min_lag >= max_lag {
                return None;
            }
            for i in 0..n {
                prefix[i + 1] = prefix[i] + frame[i] * frame[i];
            }
            let r: Vec<f64> = (0..=max_lag + 1)
                .map(|lag| {
                    if lag < min_lag - 1 {
                        return 0.0;
                    }
                    let m = n - lag;
                    let num: f64 = (0..m).map(|i| frame[i] * frame[i + lag]).sum();
                    let e0 = prefix[m];
                    let e1 = prefix[n] - prefix[lag];
                    num / (e0 * e1).sqrt().max(1e-12)
                })
                .collect();

            let peaks: Vec<usize> = (min_lag..=max_lag)
                .filter(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1])
                .collect();
            let best = peaks.iter().map(|&l| r[l]).fold(f64::NEG_INFINITY, f64::max);
            if !(best >= pc.voicing_threshold) {
                return None;
            }
            let lag = *peaks.iter().find(|&&l| r[l] >= pc.octave_ratio * best)?;

            let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-12 {
                (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            Some(sr / (lag as f64 + offset))
        })
        .collect()
}

/// Autocorrelation pitch tracker producing a per-utterance z-normalized
/// log-F0 contour, frame-aligned with [`super::compute_spectrogram`].
///
/// A fully unvoiced input yields an all-false mask rather than an error.
pub fn extract_pitch(w: &Waveform, config: &SpectrogramConfig, pc: &PitchConfig) -> Result<PitchContour> {
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    let raw = track_f0(&w.samples, config, pc);
    let logs: Vec<f64> = raw.iter().flatten().map(|f| f.ln()).collect();
    let n = logs.len().max(1) as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = (var + pc.std_floor * pc.std_floor).sqrt();

    let f0 = raw
        .iter()
        .map(|f| match f {
            Some(hz) => (hz.ln() - mean) / sd,
            None => UNVOICED_FILL,
        })
        .collect();
    let voiced = raw.iter().map(Option::is_some).collect();
    Ok(PitchContour { f0, voiced })
}

const SURROGATE_CANDIDATES: usize = 64;
const SURROGATE_MAX_HARMONIC_HZ: f64 = 4000.0;
const SURROGATE_HARMONIC_DECAY: f64 = 0.95;

/// Harmonic-sieve templates over the mel bands: column `c` weighs bands at
/// the harmonics of candidate `c` positively and the bands halfway between
/// them negatively. Returns the `n_mels x C` templates and `ln` of each
/// candidate frequency.
fn harmonic_templates(config: &SpectrogramConfig, pc: &PitchConfig) -> (Mat, Mat) {
    let fb = mel_filterbank(config);
    let bin_hz = config.sample_rate as f64 / config.window_len() as f64;
    let peaks: Vec<f64> = fb.weights.rows().into_iter().map(|r| r.fold(0.0f64, |a, &b| a.max(b))).collect();
    // Unit-peak triangular response of band `m` at `hz`, read off the filterbank.
    let response = |m: usize, hz: f64| {
        let x = hz / bin_hz;
        let k = x.floor() as usize;
        if k + 1 >= fb.weights.ncols() || peaks[m] <= 0.0 {
            return 0.0;
        }
        let w = (1.0 - x.fract()) * fb.weights[[m, k]] + x.fract() * fb.weights[[m, k + 1]];
        w / peaks[m]
    };
    let (lo, hi) = (pc.fmin.ln(), pc.fmax.ln());
    let log_f: Vec<f64> = (0..SURROGATE_CANDIDATES)
        .map(|c| lo + (hi - lo) * c as f64 / (SURROGATE_CANDIDATES - 1) as f64)
        .collect();
    let mut t = Mat::zeros((config.n_mels, SURROGATE_CANDIDATES));
    for (c, lf) in log_f.iter().enumerate() {
        let f0 = lf.exp();
        let mut weight = 1.0;
        let mut h = 1.0;
        while h * f0 <= SURROGATE_MAX_HARMONIC_HZ {
            for m in 0..config.n_mels {
                t[[m, c]] += weight * (response(m, h * f0) - response(m, (h - 0.5) * f0));
            }
            weight *= SURROGATE_HARMONIC_DECAY;
            h += 1.0;
        }
        let norm: f64 = t.column(c).iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            t.column_mut(c).mapv_inplace(|v| v / norm);
        }
    }
    (t, Mat::from_shape_vec((SURROGATE_CANDIDATES, 1), log_f).expect("column shape"))
}

/// Differentiable stand-in for [`extract_pitch`] computed from a spectrogram
/// on the tape: harmonic-sieve scores over log-spaced F0 candidates, a
/// softmax over candidates, the expected log-F0, standardized over time.
/// Returns `T x 1`.
pub fn pitch_surrogate(tape: &mut Tape, spec: Var, config: &SpectrogramConfig, pc: &PitchConfig) -> Var {
    let (templates, log_f) = harmonic_templates(config, pc);
    let t = tape.constant(templates);
    let scores = tape.matmul(spec, t);
    let sharp = tape.scale(scores, pc.surrogate_sharpness);
    let weights = tape.softmax_rows(sharp);
    let centers = tape.constant(log_f);
    let expected = tape.matmul(weights, centers);
    tape.standardize_cols(expected, pc.std_floor)
}
