use std::path::PathBuf;

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input size mismatch: expected {expected}x{expected}x1, got {got:?}")]
    SizeMismatch { expected: usize, got: Vec<usize> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample {sample} has no {partner} partner in the batch")]
    InsufficientClassStructure { sample: usize, partner: &'static str },
    #[error("cannot place {per_class} orthogonal centers in dimension {dim}")]
    InfeasibleCenters { dim: usize, per_class: usize },
    #[error("orthogonalization restart budget of {budget} redraws exceeded for center {center}")]
    RestartBudgetExceeded { center: usize, budget: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("unreadable image {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("image {path} is not 8-bit grayscale")]
    NonGrayscale { path: PathBuf },
    #[error("class directory {path} contains no images")]
    EmptyClass { path: PathBuf },
    #[error("dataset root {path} is missing or has no class directories")]
    MissingDataset { path: PathBuf },
    #[error("class {class} has {count} samples, need at least {needed}")]
    ClassTooSmall { class: usize, count: usize, needed: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: l_disc={l_disc}, l_mfc={l_mfc}, total={total}")]
    NonFiniteLoss { step: u64, l_disc: f64, l_mfc: f64, total: f64 },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
