use std::sync::Arc;

use super::{Factor, FactorSet, ModelConfig, ModelState, ParamStore};
use crate::autodiff::{Mat, Tape, TimeMap, Var};
use crate::dataset::SpeakerVector;
use crate::signal::{resample_plan, PitchContour, Spectrogram};
use crate::{seeds, Error, Result};

/// Parameters bound to a tape, looked up by name.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<(String, Var)>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Bound variables in [`ParamStore`] order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.0.iter().map(|&(_, v)| v)
    }
}

/// Records every parameter on the tape, as differentiable leaves when
/// `trainable` and as constants otherwise.
pub fn bind_params(tape: &mut Tape, params: &ParamStore, trainable: bool) -> ParamVars {
    ParamVars(
        params
            .iter()
            .map(|(name, m)| {
                let v = if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (name.clone(), v)
            })
            .collect(),
    )
}

/// Factor set living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct FactorVars {
    pub rhythm: Var,
    pub pitch: Var,
    pub content: Var,
    pub timbre: Var,
    pub frames: usize,
}

impl FactorVars {
    pub fn get(&self, f: Factor) -> Var {
        match f {
            Factor::Rhythm => self.rhythm,
            Factor::Pitch => self.pitch,
            Factor::Content => self.content,
            Factor::Timbre => self.timbre,
        }
    }

    pub fn set(&mut self, f: Factor, v: Var) {
        match f {
            Factor::Rhythm => self.rhythm = v,
            Factor::Pitch => self.pitch = v,
            Factor::Content => self.content = v,
            Factor::Timbre => self.timbre = v,
        }
    }

    pub fn to_factor_set(&self, tape: &Tape) -> FactorSet {
        FactorSet {
            rhythm: tape.value(self.rhythm).clone(),
            pitch: tape.value(self.pitch).clone(),
            content: tape.value(self.content).clone(),
            timbre: tape.value(self.timbre).clone(),
            frames: self.frames,
        }
    }

    pub fn from_factor_set(tape: &mut Tape, z: &FactorSet) -> Self {
        Self {
            rhythm: tape.constant(z.rhythm.clone()),
            pitch: tape.constant(z.pitch.clone()),
            content: tape.constant(z.content.clone()),
            timbre: tape.constant(z.timbre.clone()),
            frames: z.frames,
        }
    }

    /// Constant copy of every factor.
    pub fn detach(&self, tape: &mut Tape) -> Self {
        Self {
            rhythm: tape.detach(self.rhythm),
            pitch: tape.detach(self.pitch),
            content: tape.detach(self.content),
            timbre: tape.detach(self.timbre),
            frames: self.frames,
        }
    }
}

/// Code counts `(rhythm, pitch, content)` for a `frames`-long input.
pub fn factor_frames(cfg: &ModelConfig, frames: usize) -> (usize, usize, usize) {
    (
        frames.div_ceil(cfg.down_r),
        frames.div_ceil(cfg.down_f),
        frames.div_ceil(cfg.down_c),
    )
}

const CONTENT_STREAM: u64 = 1;
const PITCH_STREAM: u64 = 2;

/// Width-3 temporal convolution as a dense layer over `[x[t-1], x[t], x[t+1]]`.
fn conv3(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let t = tape.shape(x).0;
    let prev = tape.time_map(x, Arc::new(TimeMap::shift(t, -1)));
    let next = tape.time_map(x, Arc::new(TimeMap::shift(t, 1)));
    let stacked = tape.concat_cols(&[prev, x, next]);
    tape.linear(stacked, w, b)
}

fn encoder(tape: &mut Tape, pv: &ParamVars, name: &str, x: Var, down: usize) -> Var {
    let t = tape.shape(x).0;
    let h = conv3(tape, x, pv.get(&format!("enc_{name}.conv.w")), pv.get(&format!("enc_{name}.conv.b")));
    let h = tape.tanh(h);
    let z = tape.linear(h, pv.get(&format!("enc_{name}.proj.w")), pv.get(&format!("enc_{name}.proj.b")));
    let z = tape.tanh(z);
    tape.time_map(z, Arc::new(TimeMap::avg_pool(t, down)))
}

fn random_resample_var(tape: &mut Tape, cfg: &ModelConfig, x: Var, seed: u64) -> Var {
    let t = tape.shape(x).0;
    let plan = resample_plan(t, &cfg.rr.with_seed(seed))
        .expect("validated resample spec and non-empty input")
        .fit_length(t);
    tape.time_map(x, Arc::new(plan))
}

/// Encodes on the tape. `spec` is `T x n_mels`, `pitch` is `T x 1` and
/// `timbre` is `1 x d_t`. With `rr_seed = None` no random resampling is
/// applied (inference); otherwise the content and pitch inputs get
/// independent resampling realizations derived from the seed, each fitted
/// back to `T` frames.
pub fn encode_vars(
    tape: &mut Tape,
    cfg: &ModelConfig,
    pv: &ParamVars,
    spec: Var,
    pitch: Var,
    timbre: Var,
    rr_seed: Option<u64>,
) -> FactorVars {
    let frames = tape.shape(spec).0;
    let rhythm = encoder(tape, pv, "rhythm", spec, cfg.down_r);

    let (content_in, pitch_in) = match rr_seed {
        Some(seed) => (
            random_resample_var(tape, cfg, spec, seeds::derive(seed, CONTENT_STREAM)),
            random_resample_var(tape, cfg, pitch, seeds::derive(seed, PITCH_STREAM)),
        ),
        None => (spec, pitch),
    };
    let pitch = encoder(tape, pv, "pitch", pitch_in, cfg.down_f);
    let content = encoder(tape, pv, "content", content_in, cfg.down_c);

    let timbre = if cfg.learn_timbre {
        let h = tape.linear(spec, pv.get("enc_timbre.proj.w"), pv.get("enc_timbre.proj.b"));
        let m = tape.mean_rows(h);
        tape.l2_normalize_rows(m, 1e-12)
    } else {
        timbre
    };
    FactorVars {
        rhythm,
        pitch,
        content,
        timbre,
        frames,
    }
}

/// Decodes a factor set on the tape to a `frames x n_mels` spectrogram.
pub fn decode_vars(tape: &mut Tape, cfg: &ModelConfig, pv: &ParamVars, z: &FactorVars) -> Var {
    let t = z.frames;
    let up = |tape: &mut Tape, v: Var, down: usize| {
        let n = tape.shape(v).0;
        tape.time_map(v, Arc::new(TimeMap::repeat_upsample(n, down, t)))
    };
    let r = up(tape, z.rhythm, cfg.down_r);
    let f = up(tape, z.pitch, cfg.down_f);
    let c = up(tape, z.content, cfg.down_c);
    let tb = tape.broadcast_rows(z.timbre, t);
    let x = tape.concat_cols(&[r, f, c, tb]);

    let h = conv3(tape, x, pv.get("dec.conv1.w"), pv.get("dec.conv1.b"));
    let h = tape.tanh(h);
    let h = conv3(tape, h, pv.get("dec.conv2.w"), pv.get("dec.conv2.b"));
    let h = tape.tanh(h);
    tape.linear(h, pv.get("dec.out.w"), pv.get("dec.out.b"))
}

fn mismatch(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// `Z_r = E_r(S)`, `Z_f = E_f(RR(P))`, `Z_c = E_c(RR(S))`, `Z_t = v`.
///
/// Deterministic given `rr_seed`; `None` disables resampling.
pub fn encode(
    state: &ModelState,
    spec: &Spectrogram,
    pitch: &PitchContour,
    v: &SpeakerVector,
    rr_seed: Option<u64>,
) -> Result<FactorSet> {
    let cfg = &state.config;
    if spec.n_bands() != cfg.n_mels() {
        return Err(mismatch("spectrogram bands", cfg.n_mels(), spec.n_bands()));
    }
    if spec.n_frames() == 0 {
        return Err(Error::EmptyInput("spectrogram"));
    }
    if pitch.len() != spec.n_frames() {
        return Err(mismatch("pitch contour frames", spec.n_frames(), pitch.len()));
    }
    if v.dim() != cfg.d_t {
        return Err(mismatch("speaker vector dimension", cfg.d_t, v.dim()));
    }
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &state.params, false);
    let s = tape.constant(spec.frames.clone());
    let p = tape.constant(pitch.as_column());
    let t = tape.constant(v.as_row());
    let z = encode_vars(&mut tape, cfg, &pv, s, p, t, rr_seed);
    Ok(z.to_factor_set(&tape))
}

/// Checks that `z` can be decoded under `cfg`.
pub(crate) fn check_factor_shapes(cfg: &ModelConfig, z: &FactorSet) -> Result<()> {
    if z.frames == 0 {
        return Err(Error::EmptyInput("factor set frames"));
    }
    let (tr, tf, tc) = factor_frames(cfg, z.frames);
    let expect = [
        (Factor::Rhythm, (tr, cfg.d_r)),
        (Factor::Pitch, (tf, cfg.d_f)),
        (Factor::Content, (tc, cfg.d_c)),
        (Factor::Timbre, (1, cfg.d_t)),
    ];
    for (f, shape) in expect {
        let got = z.get(f).dim();
        if got != shape {
            return Err(Error::ShapeMismatch {
                context: "factor set",
                expected: format!("{f} {shape:?}"),
                got: format!("{f} {got:?}"),
            });
        }
    }
    Ok(())
}

/// `D(Z_r, Z_f, Z_c, Z_t)` as a spectrogram of `z.frames` frames.
pub fn decode(state: &ModelState, z: &FactorSet) -> Result<Spectrogram> {
    let cfg = &state.config;
    check_factor_shapes(cfg, z)?;
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &state.params, false);
    let zv = FactorVars::from_factor_set(&mut tape, z);
    let out = decode_vars(&mut tape, cfg, &pv, &zv);
    let frames: Mat = tape.value(out).clone();
    Spectrogram::new(frames, cfg.features.spectrogram.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectrogramConfig;
    use proptest::prelude::*;

    fn inputs(t: usize) -> (Spectrogram, PitchContour, SpeakerVector) {
        let s = Spectrogram::new(
            Mat::from_shape_fn((t, 80), |(i, b)| ((i * 7 + b * 3) % 13) as f64 / 13.0),
            SpectrogramConfig::default(),
        )
        .unwrap();
        let p = PitchContour {
            f0: (0..t).map(|i| (i as f64 * 0.3).sin()).collect(),
            voiced: vec![true; t],
        };
        let v = SpeakerVector::from_raw((0..16).map(|i| i as f64 - 7.5).collect()).unwrap();
        (s, p, v)
    }

    fn state() -> ModelState {
        ModelState::new(ModelConfig::default()).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_timbre_is_passed_through() {
        let st = state();
        let (s, p, v) = inputs(64);
        let a = encode(&st, &s, &p, &v, Some(3)).unwrap();
        let b = encode(&st, &s, &p, &v, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.timbre, v.as_row());
    }

    #[test]
    fn content_codes_at_192_frames() {
        let st = state();
        let (s, p, v) = inputs(192);
        let z = encode(&st, &s, &p, &v, Some(0)).unwrap();
        assert_eq!(z.content.dim(), (24, 8));
        assert_eq!(z.rhythm.dim(), (24, 2));
        assert_eq!(z.pitch.dim(), (24, 4));
        assert_eq!(z.timbre.dim(), (1, 16));
    }

    #[test]
    fn rhythm_ignores_rr_seed_but_content_and_pitch_do_not() {
        let st = state();
        let (s, p, v) = inputs(96);
        let a = encode(&st, &s, &p, &v, Some(1)).unwrap();
        let b = encode(&st, &s, &p, &v, Some(2)).unwrap();
        assert_eq!(a.rhythm, b.rhythm);
        assert_ne!(a.content, b.content);
        assert_ne!(a.pitch, b.pitch);
        let none = encode(&st, &s, &p, &v, None).unwrap();
        assert_eq!(none.rhythm, a.rhythm);
    }

    #[test]
    fn decode_shapes_and_zero_input() {
        let st = state();
        let (s, p, v) = inputs(50);
        let z = encode(&st, &s, &p, &v, Some(5)).unwrap();
        let out = decode(&st, &z).unwrap();
        assert_eq!(out.n_frames(), 50);
        assert_eq!(out.n_bands(), 80);
        let zero = decode(&st, &z.zeros_like()).unwrap();
        assert!(zero.frames.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let st = state();
        let (s, p, v) = inputs(20);
        let short = PitchContour { f0: vec![0.0; 19], voiced: vec![false; 19] };
        assert!(matches!(encode(&st, &s, &short, &v, None), Err(Error::ShapeMismatch { .. })));
        let v8 = SpeakerVector::from_raw(vec![1.0; 8]).unwrap();
        assert!(matches!(encode(&st, &s, &p, &v8, None), Err(Error::ShapeMismatch { .. })));
        let mut z = encode(&st, &s, &p, &v, None).unwrap();
        z.content = Mat::zeros((3, 5));
        assert!(matches!(decode(&st, &z), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn learned_timbre_is_unit_norm() {
        let st = ModelState::new(ModelConfig { learn_timbre: true, ..Default::default() }).unwrap();
        let (s, p, v) = inputs(30);
        let z = encode(&st, &s, &p, &v, None).unwrap();
        let n: f64 = z.timbre.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_ne!(z.timbre, v.as_row());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn any_length_encodes_and_decodes(t in 1usize..=192, seed in any::<u64>()) {
            let st = state();
            let (s, p, v) = inputs(t);
            let z = encode(&st, &s, &p, &v, Some(seed)).unwrap();
            let (tr, tf, tc) = factor_frames(&st.config, t);
            prop_assert_eq!(z.rhythm.nrows(), tr);
            prop_assert_eq!(z.pitch.nrows(), tf);
            prop_assert_eq!(z.content.nrows(), tc);
            prop_assert_eq!(&z.timbre, &v.as_row());
            let out = decode(&st, &z).unwrap();
            prop_assert_eq!(out.frames.dim(), (t, 80));
        }
    }
}
