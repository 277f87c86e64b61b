// SPDX-License-Identifier: Apache-2.0
use std::fmt;

use thiserror::Error;

/// Position of a block in the block grid of a matrix (row-major grid order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BlockCoord {
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for BlockCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("density violation at block {block}: {count} non-zeros > bound {bound}")]
    DensityViolation {
        block: BlockCoord,
        count: usize,
        bound: usize,
    },
    #[error("malformed block: {0}")]
    MalformedBlock(String),
    #[error("invalid DBB format: {0}")]
    InvalidFormat(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
    #[error("cost model is not calibrated: {0}")]
    UncalibratedModel(String),
    #[error("insufficient anchors: need {needed} distinct sparsity points, got {got}")]
    InsufficientAnchors { needed: usize, got: usize },
    #[error("calibration produced negative coefficient {name} = {value}")]
    NegativeCoefficient { name: &'static str, value: f64 },
    #[error("design space is empty: {0}")]
    EmptySpace(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
