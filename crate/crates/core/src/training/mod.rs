//! Losses, random factor substitution, and the training loop.
//!
//! One code path serves both objectives. With `alpha = 0` the cycle path is
//! still computed and reported but carries no weight, which is exactly the
//! plain bottleneck autoencoder.

mod linear_toy;
mod losses;
mod rfs;
mod step;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{pair_batches, PairingConfig, Utterance};
use crate::model::{decode, encode, ModelConfig, ModelState};
use crate::{seeds, Error, Result};

pub use linear_toy::{run_linear_toy, LinearToyConfig, LinearToyReport};
pub use losses::{cycle_loss, cycle_loss_vars, reconstruction_loss, LossBreakdown};
pub use rfs::{rfs, rfs_choice, RFSOutcome};
pub use step::{evaluate_losses, loss_and_gradients, train_step, Adam, ObjectiveConfig, OptimizerConfig};

/// Everything a training run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    /// Master seed for pairing, cropping, resampling and substitution.
    pub seed: u64,
    /// Stop after this many consecutive non-finite steps.
    pub divergence_patience: usize,
    /// Save a checkpoint every this many steps; `0` saves only at the end.
    pub checkpoint_every: u64,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub pairing: PairingConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 0,
            divergence_patience: 5,
            checkpoint_every: 0,
            objective: ObjectiveConfig::default(),
            optimizer: OptimizerConfig::default(),
            pairing: PairingConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parses TOML; unknown keys are rejected by name.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.objective.alpha.is_finite() || self.objective.alpha < 0.0 {
            return Err(Error::InvalidConfig("objective.alpha must be finite and non-negative".into()));
        }
        if self.divergence_patience == 0 {
            return Err(Error::InvalidConfig("divergence_patience must be at least 1".into()));
        }
        if self.pairing.batch_size == 0 || self.pairing.crop_frames == 0 {
            return Err(Error::InvalidConfig("pairing.batch_size and pairing.crop_frames must be at least 1".into()));
        }
        if self.pairing.crop_frames > crate::signal::MAX_CROP_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "pairing.crop_frames must not exceed {}",
                crate::signal::MAX_CROP_FRAMES
            )));
        }
        self.optimizer.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub step: u64,
    pub loss: LossBreakdown,
}

/// Per-step losses of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<HistoryEntry>,
}

impl LossHistory {
    /// `step,rec,cyc,total` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,rec,cyc,total\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.step, e.loss.rec, e.loss.cyc, e.loss.total);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn first(&self) -> Option<&LossBreakdown> {
        self.entries.first().map(|e| &e.loss)
    }

    pub fn last(&self) -> Option<&LossBreakdown> {
        self.entries.last().map(|e| &e.loss)
    }
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub history: LossHistory,
}

const PAIRING_STREAM: u64 = 0x7061_6972;
const STEP_STREAM: u64 = 0x7374_6570;

/// Runs `cfg.steps` updates on `state` (whose own configuration is used for
/// the network). Checkpoints are written to `checkpoint_dir` as
/// `step_NNNNNN.ckpt` when `checkpoint_every > 0`.
pub fn train(
    mut state: ModelState,
    utterances: &[Utterance],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut history = LossHistory::default();
    if cfg.steps == 0 {
        return Ok(TrainOutcome { state, history });
    }
    if utterances.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    let mut stream = pair_batches(utterances, &cfg.pairing, seeds::derive(cfg.seed, PAIRING_STREAM))?;
    let mut opt = Adam::new(cfg.optimizer, &state.params);
    let step_seeds = seeds::derive(cfg.seed, STEP_STREAM);
    let mut consecutive = 0usize;

    for i in 0..cfg.steps {
        let batch = stream.next().expect("pair stream is endless");
        let step = state.step;
        match train_step(&mut state, &mut opt, &batch, &cfg.objective, seeds::derive(step_seeds, step)) {
            Ok(loss) => {
                consecutive = 0;
                history.entries.push(HistoryEntry { step, loss });
                log::debug!("step {step}: rec {:.6} cyc {:.6} total {:.6}", loss.rec, loss.cyc, loss.total);
            }
            Err(Error::NonFiniteLoss { step, rec, cyc }) => {
                consecutive += 1;
                log::warn!("step {step}: non-finite loss (rec {rec}, cyc {cyc}); update skipped");
                if consecutive >= cfg.divergence_patience {
                    return Err(Error::Diverged { step, consecutive });
                }
                // Skipped steps still advance the counter so seeds move on.
                state.step += 1;
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (i + 1) % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                state.save(&dir.join(format!("step_{:06}.ckpt", state.step)))?;
            }
        }
    }
    Ok(TrainOutcome { state, history })
}

/// Frame-weighted mean reconstruction error of full utterances encoded
/// without random resampling.
pub fn reconstruction_error(state: &ModelState, utterances: &[Utterance]) -> Result<f64> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("evaluation utterances"));
    }
    let (mut acc, mut frames) = (0.0, 0usize);
    for u in utterances {
        let z = encode(state, &u.spectrogram, &u.pitch, &u.speaker_vector, None)?;
        let s_hat = decode(state, &z)?;
        acc += reconstruction_loss(&s_hat, &u.spectrogram)? * u.n_frames() as f64;
        frames += u.n_frames();
    }
    Ok(acc / frames as f64)
}
