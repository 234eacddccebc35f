use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal of length {len} is too short for {levels} decomposition levels")]
    SignalTooShort { len: usize, levels: usize },

    #[error("record has no channels or no samples")]
    EmptyRecord,

    #[error("window of {window} samples exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("{what} {size} is not divisible by patch size {patch}")]
    NotDivisible { what: &'static str, size: usize, patch: usize },

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),

    #[error("corrupt manifest at {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },

    #[error("header mismatch in {path}: {reason}")]
    HeaderMismatch { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),

    #[error("dataset unreadable: {0}")]
    DatasetUnreadable(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("prompt configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("prompt depth {depth} outside 1..={layers}")]
    DepthOutOfRange { depth: usize, layers: usize },

    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("frozen parameter {0} changed during training")]
    FrozenViolation(String),

    #[error("hyperparameter grid is empty")]
    EmptyGrid,

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),

    #[error("requested {requested} training samples but only {available} available")]
    InsufficientData { requested: usize, available: usize },

    #[error("no runs found under {0}")]
    NoRunsFound(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric. Usage errors (1)
    /// are raised by the argument parser before any of these exist.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::BadConfig(_)
            | Error::ConfigMismatch(_)
            | Error::DepthOutOfRange { .. }
            | Error::RatioOutOfRange(_)
            | Error::EmptyGrid => 2,
            Error::NonFiniteLoss { .. } | Error::FrozenViolation(_) => 4,
            _ => 3,
        }
    }
}
