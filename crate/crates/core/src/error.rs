use std::io;

use thiserror::Error;

/// A configuration value that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown terrain kind `{0}`")]
    UnknownTerrain(String),
    #[error("grid size {0} is too small for terrain generation (minimum 16)")]
    GridTooSmall(usize),
    #[error("initial population {requested} exceeds the {available} available cells")]
    NotEnoughCells { requested: usize, available: usize },
    #[error("agent {0} is not alive")]
    DeadAgent(u32),
    #[error(
        "observation has {found} values for sensor `{sensor}`, architecture expects {expected}"
    )]
    ShapeMismatch {
        sensor: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("vision sensor is disabled for this configuration")]
    VisionDisabled,
    #[error("reference size must be positive")]
    ZeroReferenceSize,
    #[error("series is empty")]
    EmptySeries,
    #[error("no runs to summarize")]
    NoRuns,
    #[error("snapshot checksum mismatch (file truncated or corrupt)")]
    Checksum,
    #[error("not a snapshot file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
