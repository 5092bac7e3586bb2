use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("filter design: {0}")]
    FilterDesign(String),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("report {path}: {source}")]
    Report {
        path: PathBuf,
        #[source]
        source: ReportError,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while decoding a BSAC1 container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected \"BSAC1\", found {0:?}")]
    BadMagic([u8; 5]),

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("declared size exceeds payload: {0}")]
    Oversize(String),

    #[error("{0} trailing bytes after last segment")]
    TrailingBytes(usize),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while reading a report document.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
