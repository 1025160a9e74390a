//! Linear two-factor instantiation of the cycle objective.
//!
//! Observations are `x = s A + noise` with two correlated scalar sources.
//! A linear encoder maps `x` to two scalar factors and a linear decoder maps
//! them back. Training uses the same reconstruction plus cycle objective as
//! the full model, with one of the two factors swapped between the members
//! of each pair. When the cycle loss vanishes, the re-encoded factors of
//! independently combined pairs are themselves uncorrelated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::step::{Adam, OptimizerConfig};
use crate::autodiff::{Mat, Tape, Var};
use crate::model::ParamStore;
use crate::{seeds, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearToyConfig {
    pub observed_dim: usize,
    pub train_samples: usize,
    /// Correlation between the two sources within one observation.
    pub source_correlation: f64,
    pub noise: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the held-out cycle loss is below this.
    pub target_cycle: f64,
    pub eval_every: usize,
    pub eval_pairs: usize,
    pub seed: u64,
}

impl Default for LinearToyConfig {
    fn default() -> Self {
        Self {
            observed_dim: 4,
            train_samples: 512,
            source_correlation: 0.8,
            noise: 0.05,
            alpha: 5.0,
            batch_size: 64,
            learning_rate: 1e-2,
            max_steps: 20_000,
            target_cycle: 1e-4,
            eval_every: 100,
            eval_pairs: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearToyReport {
    pub steps: usize,
    pub reached_target: bool,
    pub final_cycle: f64,
    pub final_rec: f64,
    /// `corr(Z'_1_hat, Z'_2_hat)` over independently combined pairs, before training.
    pub initial_corr: f64,
    /// The same after training.
    pub final_corr: f64,
}

struct Data {
    mixing: Mat,
    rng: ChaCha8Rng,
    cfg: LinearToyConfig,
}

impl Data {
    fn sample(&mut self, n: usize) -> Mat {
        let rho = self.cfg.source_correlation;
        let mut s = Mat::zeros((n, 2));
        for mut row in s.rows_mut() {
            let a: f64 = StandardNormal.sample(&mut self.rng);
            let b: f64 = StandardNormal.sample(&mut self.rng);
            row[0] = a;
            row[1] = 0.5 * (rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        let noise = Mat::from_shape_fn((n, self.cfg.observed_dim), |_| {
            let v: f64 = StandardNormal.sample(&mut self.rng);
            self.cfg.noise * v
        });
        s.dot(&self.mixing) + noise
    }
}

fn forward(tape: &mut Tape, e: Var, d: Var, b: Var, x: Var) -> (Var, Var) {
    let z = tape.matmul(x, e);
    let x_hat = tape.matmul(z, d);
    let x_hat = tape.add_row(x_hat, b);
    (z, x_hat)
}

fn swap(tape: &mut Tape, za: Var, zb: Var, factor: usize) -> Var {
    let (a0, a1) = (tape.slice_cols(za, 0, 1), tape.slice_cols(za, 1, 2));
    let (b0, b1) = (tape.slice_cols(zb, 0, 1), tape.slice_cols(zb, 1, 2));
    if factor == 0 {
        tape.concat_cols(&[b0, a1])
    } else {
        tape.concat_cols(&[a0, b1])
    }
}

fn per_factor_mse(tape: &mut Tape, target: Var, got: Var) -> Var {
    let terms: Vec<Var> = (0..2)
        .map(|k| {
            let t = tape.slice_cols(target, k, k + 1);
            let g = tape.slice_cols(got, k, k + 1);
            tape.mse(g, t)
        })
        .collect();
    tape.sum(&terms)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt().max(f64::MIN_POSITIVE)
}

/// Held-out cycle loss, reconstruction loss and re-encoded factor
/// correlation, with factor 1 taken from `x1` and factor 2 from `x2`.
fn evaluate(p: &ParamStore, x1: &Mat, x2: &Mat) -> (f64, f64, f64) {
    let (e, d, b) = (p.get("e").unwrap(), p.get("d").unwrap(), p.get("b").unwrap());
    let z1 = x1.dot(e);
    let z2 = x2.dot(e);
    let rec = {
        let diff = z1.dot(d) + b - x1;
        diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
    };
    let mut zp = z1.clone();
    zp.column_mut(1).assign(&z2.column(1));
    let z_hat = (zp.dot(d) + b).dot(e);
    let n = zp.nrows() as f64;
    let cyc: f64 = (0..2)
        .map(|k| z_hat.column(k).iter().zip(zp.column(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        .sum();
    let c1: Vec<f64> = z_hat.column(0).to_vec();
    let c2: Vec<f64> = z_hat.column(1).to_vec();
    (cyc, rec, pearson(&c1, &c2))
}

/// Trains the linear toy until the held-out cycle loss reaches
/// `target_cycle` or `max_steps` is exhausted.
pub fn run_linear_toy(cfg: &LinearToyConfig) -> Result<LinearToyReport> {
    if cfg.observed_dim < 2 || cfg.train_samples < 2 || cfg.batch_size == 0 || cfg.eval_pairs < 2 || cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("linear toy sizes are too small".into()));
    }
    if !(cfg.source_correlation.abs() < 1.0) {
        return Err(Error::InvalidConfig("source_correlation must be in (-1, 1)".into()));
    }
    let dim = cfg.observed_dim;
    let mut init = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 0));
    let mixing = Mat::from_shape_fn((2, dim), |_| init.random_range(-1.0..1.0));
    let mut data = Data {
        mixing,
        rng: ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 1)),
        cfg: cfg.clone(),
    };
    let train = data.sample(cfg.train_samples);
    let x1 = data.sample(cfg.eval_pairs);
    let x2 = data.sample(cfg.eval_pairs);

    let mut params = ParamStore::new(vec![
        ("e".into(), Mat::from_shape_fn((dim, 2), |_| init.random_range(-0.8..0.8))),
        ("d".into(), Mat::from_shape_fn((2, dim), |_| init.random_range(-0.8..0.8))),
        ("b".into(), Mat::zeros((1, dim))),
    ]);
    let initial_corr = evaluate(&params, &x1, &x2).2;

    let mut opt = Adam::new(
        OptimizerConfig {
            learning_rate: cfg.learning_rate,
            max_grad_norm: 0.0,
            ..Default::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 2));
    let mut steps = 0;
    let (mut cyc, mut rec, mut corr) = evaluate(&params, &x1, &x2);
    while steps < cfg.max_steps && cyc >= cfg.target_cycle {
        let mut xa = Mat::zeros((cfg.batch_size, dim));
        let mut xb = Mat::zeros((cfg.batch_size, dim));
        for r in 0..cfg.batch_size {
            let i = rng.random_range(0..cfg.train_samples);
            let j = (i + rng.random_range(1..cfg.train_samples)) % cfg.train_samples;
            xa.row_mut(r).assign(&train.row(i));
            xb.row_mut(r).assign(&train.row(j));
        }
        let factor = rng.random_range(0..2);

        let mut tape = Tape::new();
        let vars: Vec<Var> = params.values().map(|m| tape.param(m.clone())).collect();
        let (e, d, b) = (vars[0], vars[1], vars[2]);
        let xa = tape.constant(xa);
        let xb = tape.constant(xb);
        let (za, xa_hat) = forward(&mut tape, e, d, b, xa);
        let (zb, xb_hat) = forward(&mut tape, e, d, b, xb);
        let ra = tape.mse(xa_hat, xa);
        let rb = tape.mse(xb_hat, xb);
        let rsum = tape.add(ra, rb);
        let rec_v = tape.scale(rsum, 0.5);

        let zp = swap(&mut tape, za, zb, factor);
        let target = tape.detach(zp);
        let xp = tape.matmul(zp, d);
        let xp = tape.add_row(xp, b);
        let z_hat = tape.matmul(xp, e);
        let cyc_v = per_factor_mse(&mut tape, target, z_hat);
        let weighted = tape.scale(cyc_v, cfg.alpha);
        let total = tape.add(rec_v, weighted);
        if !tape.scalar(total).is_finite() {
            return Err(Error::NonFiniteLoss {
                step: steps as u64,
                rec: tape.scalar(rec_v),
                cyc: tape.scalar(cyc_v),
            });
        }
        let mut g = tape.backward(total);
        let grads: Vec<Mat> = vars.iter().map(|&v| g.take(v).expect("parameter gradient")).collect();
        opt.step(&mut params, &grads);
        steps += 1;
        if steps % cfg.eval_every == 0 || steps == cfg.max_steps {
            (cyc, rec, corr) = evaluate(&params, &x1, &x2);
        }
    }
    Ok(LinearToyReport {
        steps,
        reached_target: cyc < cfg.target_cycle,
        final_cycle: cyc,
        final_rec: rec,
        initial_corr,
        final_corr: corr,
    })
}
