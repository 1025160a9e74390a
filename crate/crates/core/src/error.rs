use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),

    #[error("waveform of {len} samples is shorter than one analysis window ({window})")]
    TooShort { len: usize, window: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("non-finite loss at step {step}: rec={rec}, cyc={cyc}")]
    NonFiniteLoss { step: u64, rec: f64, cyc: f64 },

    #[error("training diverged: {consecutive} consecutive non-finite steps ending at step {step}")]
    Diverged { step: u64, consecutive: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
