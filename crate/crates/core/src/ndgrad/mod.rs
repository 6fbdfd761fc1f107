//! Dense `f64` tensors and a per-pass reverse-mode tape.
//!
//! The tape supports exactly the ops the model and losses need. Every op
//! checks its output for NaN/Inf, and [`Graph::backward`] accumulates
//! gradients for values that feed several consumers.

mod graph;
mod tensor;

pub use graph::{op_name, BackwardFault, Gradients, Graph, NodeId, OpKind};
pub use tensor::{l2_norm, log_sum_exp, Tensor};

/// Rows with a Euclidean norm below this are rejected by normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    Degenerate { row: usize, norm: f64 },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("{op} of an empty tensor")]
    Empty { op: &'static str },
}
