use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Error, Debug)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: timestamp {t} does not increase (previous {prev})")]
    Ordering {
        path: String,
        line: usize,
        t: f64,
        prev: f64,
    },
    #[error("{path}:{line}: gap of {gap:.4} s exceeds {max_periods} nominal periods at {rate_hz} Hz")]
    Gap {
        path: String,
        line: usize,
        gap: f64,
        max_periods: u32,
        rate_hz: f64,
    },
    #[error("stream spans differ by more than {tolerance} s: knee [{knee_start}, {knee_end}], ankle [{ankle_start}, {ankle_end}]")]
    Alignment {
        knee_start: f64,
        knee_end: f64,
        ankle_start: f64,
        ankle_end: f64,
        tolerance: f64,
    },
    #[error("segment {k} has {frames} {sensor} frames, need at least {min}")]
    Sparsity {
        k: usize,
        sensor: &'static str,
        frames: usize,
        min: usize,
    },
    #[error("division by zero: {0}")]
    Division(String),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("noise dominates: second moment {second_moment} <= measurement noise variance {r}")]
    NoiseDominates { second_moment: f64, r: f64 },
    #[error("unstable model: |A| = {a} with Q = {q}")]
    Unstable { a: f64, q: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("arity: {0}")]
    Arity(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("index {k} outside [1, {n}]")]
    Range { k: usize, n: usize },
    #[error("lag {lag} must be smaller than the segment count {n}")]
    Lag { lag: usize, n: usize },
    #[error("probability {value} at position {index} outside (0, 1]")]
    Domain { index: usize, value: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("model schema version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("input digest mismatch for {path}")]
    Digest { path: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Division(_)
            | Error::Degenerate(_)
            | Error::NoiseDominates { .. }
            | Error::Unstable { .. }
            | Error::Domain { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}
