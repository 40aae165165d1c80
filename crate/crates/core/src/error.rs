use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("histogram is degenerate: all pixels are equal")]
    DegenerateHistogram,
    #[error("window {window} too large for a {height}x{width} image")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid window {0}: must be odd and at least 3")]
    InvalidWindow(usize),
    #[error("negative pixel value {0} where non-negative input is required")]
    NegativeInput(f32),
    #[error("empty sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("crop became empty after augmentation")]
    DegenerateCrop,
    #[error("empty pool: {0}")]
    EmptyPool(&'static str),
    #[error("invalid focus bounds: low {low} > high {high}")]
    InvalidBounds { low: f64, high: f64 },
    #[error("Otsu threshold inside box is degenerate")]
    EmptyBoxForeground,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter file was written for a different network spec")]
    SpecMismatch,
    #[error("identical means: Z-factor undefined")]
    EqualMeans,
    #[error("both groups constant and equal: test statistic undefined")]
    ZeroVariance,
    #[error("need at least {needed} values per group, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("line {line}: key `{key}`: {message}")]
    TypeError {
        key: String,
        line: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("malformed {what} at {path}: {message}")]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 I/O, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::UnknownKey { .. }
            | Error::MissingKey { .. }
            | Error::TypeError { .. }
            | Error::Validation(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::SpecMismatch => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
