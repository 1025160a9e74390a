use std::f64::consts::PI;
use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};

/// Reads a PCM (or float) WAV file, mixes to mono, scales to `[-1, 1]` and
/// resamples to 16 kHz.
pub fn load_audio(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let unsupported = |reason: String| Error::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ 1..=32) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| unsupported(e.to_string()))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| unsupported(e.to_string()))?,
        (fmt, bits) => return Err(unsupported(format!("{fmt:?} with {bits} bits"))),
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }

    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| (frame.iter().sum::<f64>() / frame.len() as f64).clamp(-1.0, 1.0))
        .collect();
    let samples = resample_sinc(&mono, spec.sample_rate, SAMPLE_RATE);
    if samples.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Writes 16-bit mono PCM.
pub fn save_wav(w: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)?;
    Ok(())
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * to / from)`; equal rates return the input.
pub fn resample_sinc(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    const HALF_TAPS: f64 = 16.0;
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0) * 0.95;
    let half_width = HALF_TAPS / cutoff;
    let out_len = (x.len() as f64 * ratio).round() as usize;

    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            (lo..=hi)
                .map(|k| {
                    let d = t - k as f64;
                    let arg = cutoff * d;
                    let sinc = if arg.abs() < 1e-12 {
                        1.0
                    } else {
                        (PI * arg).sin() / (PI * arg)
                    };
                    let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                    x[k] * cutoff * sinc * win
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(path: &Path, rate: u32, channels: u16, bits: u16, frames: usize) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..frames {
            let v = (2.0 * PI * 440.0 * i as f64 / rate as f64).sin() * 0.5;
            for _ in 0..channels {
                match bits {
                    8 => w.write_sample((v * 127.0) as i8).unwrap(),
                    _ => w.write_sample((v * 32767.0) as i16).unwrap(),
                }
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn stereo_48k_becomes_mono_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, 48_000, 2, 16, 48_000);
        let w = load_audio(&p).unwrap();
        assert_eq!(w.sample_rate, 16_000);
        assert_eq!(w.len(), 16_000);
        assert!(w.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
        // tone survives the low-pass
        let rms = (w.samples[1000..15000].iter().map(|s| s * s).sum::<f64>() / 14000.0).sqrt();
        assert!((rms - 0.5 / 2f64.sqrt()).abs() < 0.02, "rms {rms}");
    }

    #[test]
    fn native_rate_keeps_sample_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_wav(&p, 16_000, 1, 8, 12_345);
        assert_eq!(load_audio(&p).unwrap().len(), 12_345);
        let p = dir.path().join("c.wav");
        write_wav(&p, 16_000, 1, 16, 16_000);
        assert_eq!(load_audio(&p).unwrap().len(), 16_000);
    }

    #[test]
    fn error_cases_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_audio(&dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(missing, Error::MissingFile(_)));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not a riff file at all").unwrap();
        assert!(matches!(load_audio(&junk).unwrap_err(), Error::UnsupportedEncoding { .. }));

        let empty = dir.path().join("empty.wav");
        write_wav(&empty, 16_000, 1, 16, 0);
        assert!(matches!(load_audio(&empty).unwrap_err(), Error::EmptyAudio(_)));
    }

    #[test]
    fn save_then_load_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let w = Waveform::new((0..800).map(|i| (i as f64 * 0.01).sin() * 0.8).collect(), 16_000)
            .unwrap();
        save_wav(&w, &p).unwrap();
        let back = load_audio(&p).unwrap();
        assert_eq!(back.len(), w.len());
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }
}
