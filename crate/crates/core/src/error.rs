use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the control plane, the simulator and the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("frame {frame_id} rejected: {reason}")]
    Rejected { frame_id: u64, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("brute-force oracle limited to {limit} detections, got {got}")]
    OracleTooLarge { limit: usize, got: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("event queue exceeded {0} pending events")]
    RunawayScenario(usize),

    #[error("record violates invariant: {0}")]
    RecordInvariant(String),

    #[error("metrics undefined: {0}")]
    UndefinedMetrics(String),

    #[error("unknown {kind}: {value}")]
    Unknown { kind: &'static str, value: String },

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml decode: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
