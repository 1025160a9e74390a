//! Rhythm, pitch and content encoders, the timbre path, and the decoder.
//!
//! Each learned encoder is a width-3 temporal convolution, a `tanh`
//! bottleneck projection of configurable width, and average pooling by a
//! per-encoder downsampling factor. The decoder upsamples every factor back
//! to the frame rate by sample-and-hold, broadcasts the timbre vector,
//! concatenates, and applies two width-3 convolutions and a linear output.
//!
//! The rhythm encoder sees the unmodified spectrogram. The content encoder
//! sees a randomly resampled spectrogram and the pitch encoder a randomly
//! resampled pitch contour (never the spectrogram).

mod checkpoint;
mod factors;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::dataset::FeatureConfig;
use crate::signal::ResampleSpec;
use crate::{Error, Result};

pub use checkpoint::CHECKPOINT_VERSION;
pub use factors::{Factor, FactorSet};
pub use network::{bind_params, decode, decode_vars, encode, encode_vars, factor_frames, FactorVars, ParamVars};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_r: usize,
    pub d_f: usize,
    pub d_c: usize,
    /// Must equal the speaker vector dimension.
    pub d_t: usize,
    pub down_r: usize,
    pub down_f: usize,
    pub down_c: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// Learn the timbre encoder instead of using the supplied speaker vector.
    pub learn_timbre: bool,
    /// Random resampling ranges; the seed field is ignored (seeds are per call).
    pub rr: ResampleSpec,
    pub features: FeatureConfig,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_r: 2,
            d_f: 4,
            d_c: 8,
            d_t: 16,
            down_r: 8,
            down_f: 8,
            down_c: 8,
            encoder_hidden: 32,
            decoder_hidden: 64,
            learn_timbre: false,
            rr: ResampleSpec::default(),
            features: FeatureConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_mels(&self) -> usize {
        self.features.spectrogram.n_mels
    }

    pub fn code_dim(&self) -> usize {
        self.d_r + self.d_f + self.d_c + self.d_t
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_r", self.d_r),
            ("d_f", self.d_f),
            ("d_c", self.d_c),
            ("d_t", self.d_t),
            ("down_r", self.down_r),
            ("down_f", self.down_f),
            ("down_c", self.down_c),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.d_t != self.features.speaker_dim {
            return Err(Error::InvalidConfig(format!(
                "d_t ({}) must equal the speaker vector dimension ({})",
                self.d_t, self.features.speaker_dim
            )));
        }
        self.rr.validate()?;
        self.features.spectrogram.validate()
    }

    /// Names and shapes of every learnable tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let b = self.n_mels();
        let (he, hd) = (self.encoder_hidden, self.decoder_hidden);
        let mut v = Vec::new();
        let mut push = |name: &str, shape| v.push((name.to_string(), shape));
        for (enc, input, out) in [("rhythm", b, self.d_r), ("pitch", 1, self.d_f), ("content", b, self.d_c)] {
            push(&format!("enc_{enc}.conv.w"), (3 * input, he));
            push(&format!("enc_{enc}.conv.b"), (1, he));
            push(&format!("enc_{enc}.proj.w"), (he, out));
            push(&format!("enc_{enc}.proj.b"), (1, out));
        }
        if self.learn_timbre {
            push("enc_timbre.proj.w", (b, self.d_t));
            push("enc_timbre.proj.b", (1, self.d_t));
        }
        push("dec.conv1.w", (3 * self.code_dim(), hd));
        push("dec.conv1.b", (1, hd));
        push("dec.conv2.w", (3 * hd, hd));
        push("dec.conv2.b", (1, hd));
        push("dec.out.w", (hd, b));
        push("dec.out.b", (1, b));
        v
    }
}

/// Named learnable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Mat)>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Mat)>) -> Self {
        Self { entries }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let entries = config
            .param_shapes()
            .into_iter()
            .map(|(name, (r, c))| {
                let m = if name.ends_with(".b") {
                    Mat::zeros((r, c))
                } else {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Mat::from_shape_fn((r, c), |_| rng.random_range(-limit..limit))
                };
                (name, m)
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Mat)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut (String, Mat)> {
        self.entries.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn values(&self) -> impl Iterator<Item = &Mat> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn num_scalars(&self) -> usize {
        self.values().map(Mat::len).sum()
    }
}

/// Learnable parameters, their configuration, and the training-step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub step: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config);
        Ok(Self { config, params, step: 0 })
    }
}
