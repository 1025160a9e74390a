use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::model::{Factor, FactorSet, FactorVars};
use crate::signal::Spectrogram;
use crate::{Error, Result};

/// Loss values of one step.
///
/// Both terms use the mean over elements of squared differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub cyc: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub fn new(rec: f64, cyc: f64, alpha: f64) -> Self {
        Self {
            rec,
            cyc,
            total: rec + alpha * cyc,
            alpha,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rec.is_finite() && self.cyc.is_finite() && self.total.is_finite()
    }
}

fn mean_sq_diff(context: &'static str, a: &Mat, b: &Mat) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{:?}", b.dim()),
            got: format!("{:?}", a.dim()),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput(context));
    }
    let d = a - b;
    Ok(d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
}

/// Mean squared difference between a decoded and a reference spectrogram.
pub fn reconstruction_loss(s_hat: &Spectrogram, s: &Spectrogram) -> Result<f64> {
    mean_sq_diff("reconstruction loss", &s_hat.frames, &s.frames)
}

/// Sum over the four factors of their mean squared differences.
pub fn cycle_loss(z_prime: &FactorSet, z_hat_prime: &FactorSet) -> Result<f64> {
    Factor::ALL
        .iter()
        .map(|&f| mean_sq_diff("cycle loss", z_hat_prime.get(f), z_prime.get(f)))
        .sum()
}

/// [`cycle_loss`] on the tape.
pub fn cycle_loss_vars(tape: &mut Tape, z_prime: &FactorVars, z_hat_prime: &FactorVars) -> Var {
    let terms: Vec<Var> = Factor::ALL
        .iter()
        .map(|&f| tape.mse(z_hat_prime.get(f), z_prime.get(f)))
        .collect();
    tape.sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectrogramConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(m: Mat) -> Spectrogram {
        Spectrogram::new(m, SpectrogramConfig::default()).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng) -> FactorSet {
        let mut m = |r, c| Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        FactorSet {
            rhythm: m(3, 2),
            pitch: m(3, 4),
            content: m(3, 8),
            timbre: m(1, 16),
            frames: 24,
        }
    }

    // Plain nested loops, independent of ndarray arithmetic.
    fn oracle(a: &Mat, b: &Mat) -> f64 {
        let mut acc = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let d = a[[i, j]] - b[[i, j]];
                acc += d * d;
            }
        }
        acc / (a.nrows() * a.ncols()) as f64
    }

    #[test]
    fn reconstruction_trivial_cases() {
        let s = spec(Mat::from_shape_fn((7, 80), |(i, j)| ((i + j) % 5) as f64 / 5.0));
        assert_eq!(reconstruction_loss(&s, &s).unwrap(), 0.0);
        let shifted = Spectrogram { frames: &s.frames + 1.0, config: s.config.clone() };
        assert!((reconstruction_loss(&shifted, &s).unwrap() - 1.0).abs() < 1e-12);
        let other = spec(Mat::zeros((6, 80)));
        assert!(matches!(reconstruction_loss(&other, &s), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reconstruction_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mat::from_shape_fn((11, 80), |_| rng.random_range(0.0..1.0));
        let b = Mat::from_shape_fn((11, 80), |_| rng.random_range(0.0..1.0));
        let got = reconstruction_loss(&spec(a.clone()), &spec(b.clone())).unwrap();
        assert!((got - oracle(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn cycle_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng);
        let b = random_set(&mut rng);
        assert_eq!(cycle_loss(&a, &a).unwrap(), 0.0);

        let expected: f64 = Factor::ALL.iter().map(|&f| oracle(a.get(f), b.get(f))).sum();
        assert!((cycle_loss(&a, &b).unwrap() - expected).abs() < 1e-6);

        let only_t = a.with_factor(Factor::Timbre, &b);
        let direct = oracle(&a.timbre, &b.timbre);
        assert!((cycle_loss(&a, &only_t).unwrap() - direct).abs() < 1e-12);

        let mut bad = a.clone();
        bad.content = Mat::zeros((2, 8));
        assert!(cycle_loss(&a, &bad).is_err());
    }

    #[test]
    fn tape_cycle_loss_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_set(&mut rng);
        let b = random_set(&mut rng);
        let mut tape = Tape::new();
        let va = FactorVars::from_factor_set(&mut tape, &a);
        let vb = FactorVars::from_factor_set(&mut tape, &b);
        let l = cycle_loss_vars(&mut tape, &va, &vb);
        assert!((tape.scalar(l) - cycle_loss(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_is_linear() {
        let l = LossBreakdown::new(0.25, 0.125, 5.0);
        assert_eq!(l.total, 0.25 + 5.0 * 0.125);
        assert_eq!(LossBreakdown::new(0.3, 9.0, 0.0).total, 0.3);
    }
}
