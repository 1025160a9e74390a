//! Speech information factorization.
//!
//! Utterances are decomposed into four factors: rhythm, pitch, content and
//! timbre. Three learned encoders produce the first three from a mel
//! spectrogram and a pitch contour, while timbre is a fixed continuous speaker
//! vector. A decoder maps a factor set back to a spectrogram.
//!
//! Training supports two objectives that share one code path:
//!
//! - the plain information-bottleneck autoencoder (`alpha = 0`), and
//! - the cycle objective (`alpha > 0`), where one factor of an utterance is
//!   replaced by the corresponding factor of another, the result is decoded,
//!   re-encoded and compared to the substituted factor set.
//!
//! Disentanglement is measured with K-means discretization followed by the
//! plug-in mutual information of cluster ids.
//!
//! ```text
//! WAV -> signal (mel + pitch) -> model::encode -> FactorSet -> model::decode -> Griffin-Lim -> WAV
//! ```

pub mod autodiff;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod seeds;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
