use serde::{Deserialize, Serialize};

use super::losses::{cycle_loss_vars, LossBreakdown};
use super::rfs::rfs_choice;
use crate::autodiff::{Mat, Tape, Var};
use crate::dataset::PairBatch;
use crate::model::{bind_params, decode_vars, encode_vars, ModelConfig, ModelState, ParamStore, ParamVars};
use crate::signal::pitch_surrogate;
use crate::{seeds, Error, Result};

/// Weighting and gradient routing of the objective `L = L_rec + alpha * L_cyc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// `0` gives the plain bottleneck autoencoder.
    pub alpha: f64,
    /// Treat the substituted factor set as a constant target in the cycle loss.
    pub detach_cycle_target: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            detach_cycle_target: true,
        }
    }
}

pub(crate) struct Objective {
    pub rec: Var,
    pub cyc: Var,
    pub total: Var,
}

// Per-pair sub-seed streams.
const RR_FIRST_A: u64 = 0;
const RR_FIRST_B: u64 = 1;
const RFS_FACTOR: u64 = 2;
const RFS_DIRECTION: u64 = 3;
const RR_SECOND: u64 = 4;
const STREAMS: u64 = 8;

fn check_batch(cfg: &ModelConfig, batch: &PairBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("pair batch"));
    }
    for (a, b) in &batch.pairs {
        for u in [a, b] {
            if u.n_frames() != batch.frames || u.pitch.len() != batch.frames {
                return Err(Error::ShapeMismatch {
                    context: "batch utterance frames",
                    expected: batch.frames.to_string(),
                    got: u.n_frames().to_string(),
                });
            }
            if u.spectrogram.n_bands() != cfg.n_mels() || u.speaker_vector.dim() != cfg.d_t {
                return Err(Error::ShapeMismatch {
                    context: "batch utterance features",
                    expected: format!("{} bands, speaker dim {}", cfg.n_mels(), cfg.d_t),
                    got: format!("{} bands, speaker dim {}", u.spectrogram.n_bands(), u.speaker_vector.dim()),
                });
            }
        }
    }
    Ok(())
}

/// Records both training paths for every pair of `batch`:
///
/// 1. encode both utterances (with random resampling),
/// 2. substitute one factor of one utterance by the other's,
/// 3. decode the substituted set,
/// 4. re-encode the result, with a surrogate pitch contour and the
///    long-term-average-spectrum speaker statistic taken from the decoded
///    spectrogram,
/// 5. compare with the substituted set (cycle) and decode each first-round
///    set against its own input (reconstruction).
pub(crate) fn build_objective(
    tape: &mut Tape,
    cfg: &ModelConfig,
    pv: &ParamVars,
    batch: &PairBatch,
    obj: &ObjectiveConfig,
    seed: u64,
) -> Result<Objective> {
    check_batch(cfg, batch)?;
    let spec_cfg = &cfg.features.spectrogram;
    let mut recs = Vec::with_capacity(2 * batch.len());
    let mut cycs = Vec::with_capacity(batch.len());

    for (i, (ua, ub)) in batch.pairs.iter().enumerate() {
        let sub = |k: u64| seeds::derive(seed, i as u64 * STREAMS + k);
        let mut first = |u: &crate::dataset::Utterance, stream: u64, tape: &mut Tape| {
            let s = tape.constant(u.spectrogram.frames.clone());
            let p = tape.constant(u.pitch.as_column());
            let t = tape.constant(u.speaker_vector.as_row());
            let z = encode_vars(tape, cfg, pv, s, p, t, Some(sub(stream)));
            let s_hat = decode_vars(tape, cfg, pv, &z);
            recs.push(tape.mse(s_hat, s));
            z
        };
        let za = first(ua, RR_FIRST_A, tape);
        let zb = first(ub, RR_FIRST_B, tape);

        let (base, donor) = if sub(RFS_DIRECTION) & 1 == 0 { (za, zb) } else { (zb, za) };
        let factor = rfs_choice(sub(RFS_FACTOR));
        let mut z_prime = base;
        z_prime.set(factor, donor.get(factor));

        let s_prime = decode_vars(tape, cfg, pv, &z_prime);
        let p_hat = pitch_surrogate(tape, s_prime, spec_cfg, &cfg.features.pitch);
        // The timbre input is the vector carried in Z'; a learned timbre
        // encoder ignores it and reads the decoded spectrogram instead.
        let z_hat = encode_vars(tape, cfg, pv, s_prime, p_hat, z_prime.timbre, Some(sub(RR_SECOND)));

        let target = if obj.detach_cycle_target {
            z_prime.detach(tape)
        } else {
            z_prime
        };
        cycs.push(cycle_loss_vars(tape, &target, &z_hat));
    }

    let rec_sum = tape.sum(&recs);
    let rec = tape.scale(rec_sum, 1.0 / recs.len() as f64);
    let cyc_sum = tape.sum(&cycs);
    let cyc = tape.scale(cyc_sum, 1.0 / cycs.len() as f64);
    let weighted = tape.scale(cyc, obj.alpha);
    let total = tape.add(rec, weighted);
    Ok(Objective { rec, cyc, total })
}

fn breakdown(tape: &Tape, o: &Objective, alpha: f64, step: u64) -> Result<LossBreakdown> {
    let l = LossBreakdown {
        rec: tape.scalar(o.rec),
        cyc: tape.scalar(o.cyc),
        total: tape.scalar(o.total),
        alpha,
    };
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            rec: l.rec,
            cyc: l.cyc,
        });
    }
    Ok(l)
}

/// Forward pass only.
pub fn evaluate_losses(state: &ModelState, batch: &PairBatch, obj: &ObjectiveConfig, seed: u64) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &state.params, false);
    let o = build_objective(&mut tape, &state.config, &pv, batch, obj, seed)?;
    breakdown(&tape, &o, obj.alpha, state.step)
}

/// Losses and the gradient of the total loss for every parameter, in
/// [`ParamStore`] order.
pub fn loss_and_gradients(
    state: &ModelState,
    batch: &PairBatch,
    obj: &ObjectiveConfig,
    seed: u64,
) -> Result<(LossBreakdown, Vec<Mat>)> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &state.params, true);
    let o = build_objective(&mut tape, &state.config, &pv, batch, obj, seed)?;
    let losses = breakdown(&tape, &o, obj.alpha, state.step)?;
    let mut grads = tape.backward(o.total);
    let out = pv
        .vars()
        .zip(state.params.values())
        .map(|(v, m)| grads.take(v).unwrap_or_else(|| Mat::zeros(m.dim())))
        .collect();
    Ok((losses, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.max_grad_norm >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimizerConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params.values().map(|p| Mat::zeros(p.dim())).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Mat]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
        let clip = if self.cfg.max_grad_norm > 0.0 && norm > self.cfg.max_grad_norm {
            self.cfg.max_grad_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}

/// One update on `L = L_rec + alpha * L_cyc`. A non-finite loss leaves the
/// state untouched and is returned as an error.
pub fn train_step(
    state: &mut ModelState,
    opt: &mut Adam,
    batch: &PairBatch,
    obj: &ObjectiveConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    let (losses, grads) = loss_and_gradients(state, batch, obj, seed)?;
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            rec: losses.rec,
            cyc: losses.cyc,
        });
    }
    opt.step(&mut state.params, &grads);
    state.step += 1;
    Ok(losses)
}
