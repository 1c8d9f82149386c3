// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("rectangle #{index} ({x},{y},{w},{h}) exceeds the {canvas_w}x{canvas_h} canvas")]
    RectOutOfCanvas {
        index: usize,
        x: u64,
        y: u64,
        w: u64,
        h: u64,
        canvas_w: u64,
        canvas_h: u64,
    },
    #[error("infeasible generator spec: {0}")]
    Infeasible(String),
    #[error("empty kernel set")]
    EmptyKernelSet,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("autodiff: {0}")]
    Graph(String),
    #[error("tiling: {0}")]
    Tiling(String),
    #[error("evaluation failed for sample {index}: {reason}")]
    Evaluation { index: usize, reason: String },
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
