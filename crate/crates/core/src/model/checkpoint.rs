use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState, ParamStore};
use crate::container::TensorFile;
use crate::{Error, Result};

/// Format version written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND: &str = "cycleflow-checkpoint";

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    step: u64,
    config: ModelConfig,
}

impl ModelState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Meta {
            version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.config.clone(),
        };
        TensorFile {
            kind: KIND.into(),
            meta: serde_json::to_value(meta)?,
            tensors: self.params.iter().cloned().collect(),
        }
        .write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::read(path)?;
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if file.kind != KIND {
            return Err(corrupt(format!("expected a checkpoint, found `{}`", file.kind)));
        }
        let version = file.meta.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: CHECKPOINT_VERSION,
                })
            }
            None => return Err(corrupt("missing checkpoint version".into())),
        }
        let meta: Meta = serde_json::from_value(file.meta).map_err(|e| corrupt(e.to_string()))?;
        meta.config.validate()?;

        let shapes = meta.config.param_shapes();
        if shapes.len() != file.tensors.len() {
            return Err(corrupt(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                file.tensors.len()
            )));
        }
        for ((name, shape), (got_name, m)) in shapes.iter().zip(&file.tensors) {
            if name != got_name || *shape != m.dim() {
                return Err(corrupt(format!(
                    "tensor `{got_name}` {:?} does not match `{name}` {shape:?}",
                    m.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor `{name}` is not finite")));
            }
        }
        Ok(Self {
            config: meta.config,
            params: ParamStore::new(file.tensors),
            step: meta.step,
        })
    }

    /// Loads and checks that the stored configuration equals `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let state = Self::load(path)?;
        if &state.config != expected {
            return Err(Error::ConfigMismatch(describe_difference(&state.config, expected)));
        }
        Ok(state)
    }
}

fn describe_difference(found: &ModelConfig, expected: &ModelConfig) -> String {
    let (Ok(serde_json::Value::Object(a)), Ok(serde_json::Value::Object(b))) =
        (serde_json::to_value(found), serde_json::to_value(expected))
    else {
        return "checkpoint configuration differs".into();
    };
    let keys: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, v)| format!("{k}: checkpoint {v}, expected {}", b.get(k).cloned().unwrap_or_default()))
        .collect();
    format!("checkpoint configuration differs ({})", keys.join("; "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = ModelState::new(ModelConfig { init_seed: 9, ..Default::default() }).unwrap();
        s.step = 42;
        s.save(&path).unwrap();
        let back = ModelState::load(&path).unwrap();
        assert_eq!(back, s);
        for ((_, a), (_, b)) in back.params.iter().zip(s.params.iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ModelState::new(ModelConfig::default()).unwrap().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(ModelState::load(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn other_configuration_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ModelState::new(ModelConfig::default()).unwrap().save(&path).unwrap();
        let other = ModelConfig { d_c: 12, ..Default::default() };
        match ModelState::load_expecting(&path, &other) {
            Err(Error::ConfigMismatch(msg)) => assert!(msg.contains("d_c"), "{msg}"),
            other => panic!("expected mismatch, got {other:?}"),
        }
        assert!(ModelState::load_expecting(&path, &ModelConfig::default()).is_ok());
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = ModelState::new(ModelConfig::default()).unwrap();
        let mut meta = serde_json::to_value(Meta { version: 7, step: 0, config: s.config.clone() }).unwrap();
        meta["version"] = 7.into();
        TensorFile { kind: KIND.into(), meta, tensors: s.params.iter().cloned().collect() }
            .write(&path)
            .unwrap();
        assert!(matches!(
            ModelState::load(&path),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn missing_file() {
        let r = ModelState::load(Path::new("/nonexistent/m.ckpt"));
        assert!(r.is_err());
    }
}
