//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each operation together with the values its backward
//! rule needs. Ops validate shapes eagerly and refuse to produce NaN or
//! infinite values, so numeric blow-ups surface as [`TensorError`]s at the
//! op that caused them instead of propagating silently.

pub mod kernels;
mod rng;
mod tape;
mod tensor;

pub use rng::{normal_sample, uniform_sample, RngStream};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index { op: &'static str, index: usize, extent: usize },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: argument {value} outside the domain at flat index {index}")]
    Domain { op: &'static str, index: usize, value: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,
    #[error("backward needs a one-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}
