use std::path::PathBuf;

use thiserror::Error;

use crate::distance::Stage;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("duplicate point: class {class_id} at ({x}, {y})")]
    DuplicatePoint { class_id: u16, x: u32, y: u32 },

    #[error("bad magic {0:?}, expected \"PMSM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported score stack version {0}")]
    VersionMismatch(u16),
    #[error("invalid dimensions {planes}x{height}x{width}")]
    DimensionOverflow { planes: u32, height: u32, width: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no points for this class")]
    EmptyPointSet,
    #[error("expected a field stack in stage {expected:?}, got {found:?}")]
    StageMismatch { expected: Stage, found: Stage },
    #[error("epoch loss must be positive and finite, got {0}")]
    NonPositiveLoss(f64),
    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("no seeds supplied to the random walker")]
    NoSeeds,
    #[error("pixel ({x}, {y}) is seeded with both class {first} and class {second}")]
    ConflictingSeeds { x: u32, y: u32, first: u16, second: u16 },
    #[error("conjugate gradient did not reach residual {tolerance:e} within {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64, tolerance: f64 },
    #[error("blob is empty")]
    EmptyBlob,
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("could not place {0} shapes without overlap")]
    PlacementFailure(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than a failure inside the engine.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::SolverDiverged { .. } | Error::Io(_))
    }
}
