use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lerp_row, Mat, TimeMap};
use crate::{Error, Result};

/// Random resampling settings: the input is cut into contiguous segments
/// whose lengths are drawn from `segment_len_range`, and each segment is
/// linearly stretched by a factor drawn from `rate_range` (`< 1` shrinks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleSpec {
    pub segment_len_range: (usize, usize),
    pub rate_range: (f64, f64),
    pub seed: u64,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        Self {
            segment_len_range: (19, 32),
            rate_range: (0.5, 1.5),
            seed: 0,
        }
    }
}

impl ResampleSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let (smin, smax) = self.segment_len_range;
        let (rmin, rmax) = self.rate_range;
        if smin == 0 || smin > smax {
            return Err(Error::InvalidConfig(format!(
                "segment_len_range must satisfy 1 <= min <= max, got ({smin}, {smax})"
            )));
        }
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rate_range must satisfy 0 < min <= max, got ({rmin}, {rmax})"
            )));
        }
        Ok(())
    }
}

/// The resampling of a `len`-frame sequence as a time map, so the same
/// realization can be applied to plain matrices or on the autodiff tape.
pub fn resample_plan(len: usize, spec: &ResampleSpec) -> Result<TimeMap> {
    spec.validate()?;
    if len == 0 {
        return Err(Error::EmptyInput("sequence to resample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (smin, smax) = spec.segment_len_range;
    let (rmin, rmax) = spec.rate_range;

    let mut rows = Vec::new();
    let mut start = 0;
    while start < len {
        let seg = rng.random_range(smin..=smax).min(len - start);
        let rate = if rmin == rmax {
            rmin
        } else {
            rng.random_range(rmin..rmax)
        };
        let out = ((seg as f64 * rate).round() as usize).max(1);
        let last = start + seg - 1;
        for k in 0..out {
            let pos = start as f64 + k as f64 * seg as f64 / out as f64;
            rows.push(lerp_row(pos, start, last));
        }
        start += seg;
    }
    Ok(TimeMap::new(len, rows))
}

/// Segment-wise random time stretching of a time-major matrix.
pub fn random_resample(seq: &Mat, spec: &ResampleSpec) -> Result<Mat> {
    Ok(resample_plan(seq.nrows(), spec)?.apply(seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t: usize, d: usize) -> Mat {
        Mat::from_shape_fn((t, d), |(i, j)| (i * d + j) as f64 * 0.37 - 3.0)
    }

    #[test]
    fn unit_rates_are_identity() {
        let spec = ResampleSpec {
            rate_range: (1.0, 1.0),
            ..Default::default()
        };
        let x = ramp(100, 3);
        assert_eq!(random_resample(&x, &spec).unwrap(), x);
    }

    #[test]
    fn uniform_half_rate_halves_length() {
        let spec = ResampleSpec {
            rate_range: (0.5, 0.5),
            ..Default::default()
        };
        let out = random_resample(&ramp(100, 2), &spec).unwrap();
        assert!((out.nrows() as i64 - 50).abs() <= 2, "{}", out.nrows());
    }

    #[test]
    fn same_seed_same_output() {
        let spec = ResampleSpec::default().with_seed(42);
        let x = ramp(150, 4);
        assert_eq!(random_resample(&x, &spec).unwrap(), random_resample(&x, &spec).unwrap());
        let other = random_resample(&x, &spec.with_seed(43)).unwrap();
        assert_ne!(random_resample(&x, &spec).unwrap(), other);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            random_resample(&Mat::zeros((0, 3)), &ResampleSpec::default()),
            Err(Error::EmptyInput(_))
        ));
        let bad = ResampleSpec {
            rate_range: (1.5, 0.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ResampleSpec {
            segment_len_range: (0, 4),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn unit_rate_identity_any_seed(t in 1usize..200, seed in any::<u64>(), smin in 1usize..10, extra in 0usize..30) {
            let spec = ResampleSpec { segment_len_range: (smin, smin + extra), rate_range: (1.0, 1.0), seed };
            let x = ramp(t, 2);
            prop_assert_eq!(random_resample(&x, &spec).unwrap(), x);
        }

        #[test]
        fn output_values_stay_within_segment_hull(t in 1usize..120, seed in any::<u64>()) {
            let x = ramp(t, 1);
            let out = random_resample(&x, &ResampleSpec::default().with_seed(seed)).unwrap();
            let (lo, hi) = (x[[0, 0]], x[[t - 1, 0]]);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
            // monotone input stays monotone
            prop_assert!(out.column(0).windows(2).into_iter().all(|w| w[1] >= w[0] - 1e-9));
        }
    }
}
