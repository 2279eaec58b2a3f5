use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid needle model: {0}")]
    InvalidModel(String),

    #[error("piston contacts the ferrule at scan {scan}: displacement {displacement:e} m >= rest gap {rest_gap:e} m")]
    PhysicalContact {
        scan: usize,
        displacement: f64,
        rest_gap: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported transform length {0} (must be a power of two)")]
    UnsupportedLength(usize),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no peak found in A-scan")]
    NoPeak,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("batch norm running statistics are uninitialized (eval before any training step)")]
    UninitializedStats,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("representation mismatch: model expects {expected}-sample inputs, got {actual}")]
    RepresentationMismatch { expected: usize, actual: usize },

    #[error("missing dataset: {0}")]
    MissingDataset(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("scan {scan}: {source}")]
    AtScan {
        scan: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category label used for CLI diagnostics and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::Shape(_) | Error::Contract(_) => "input",
            Error::InvalidModel(_) | Error::PhysicalContact { .. } => "model",
            Error::Config(_) | Error::Json(_) => "config",
            Error::UnsupportedLength(_) => "input",
            Error::NoPeak | Error::DegenerateFit(_) => "fit",
            Error::UninitializedStats
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss { .. } => "training",
            Error::RepresentationMismatch { .. } => "representation",
            Error::MissingDataset(_) => "dataset",
            Error::Format { .. } => "format",
            Error::AtScan { source, .. } => source.category(),
            Error::Io { .. } | Error::Csv(_) => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_scan(scan: usize, source: Error) -> Self {
        match source {
            // keep the scan index the innermost operation reported
            e @ Error::PhysicalContact { .. } => e,
            e => Error::AtScan {
                scan,
                source: Box::new(e),
            },
        }
    }
}
