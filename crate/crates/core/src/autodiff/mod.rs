//! Minimal dense reverse-mode automatic differentiation.
//!
//! Models are expressed as a static [`Graph`] over named inputs and parameters
//! held in a [`ParamStore`]. [`Graph::evaluate`] runs the forward pass,
//! [`Graph::gradients`] runs it again and back-propagates from a scalar output,
//! and [`ParamStore::adam_step`] applies one optimizer update.

mod graph;
pub mod gradcheck;
mod kernels;
mod params;
mod tensor;

pub use graph::{Graph, Inputs, NodeId, Op};
pub use params::{AdamConfig, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: NodeId, detail: String },
    #[error("non-finite value produced by {kind} node {node}")]
    NonFinite { node: NodeId, kind: &'static str },
    #[error("input `{name}` for node {node} is not bound")]
    MissingInput { node: NodeId, name: String },
    #[error("node {node} refers to unknown parameter {param:?}")]
    UnknownParam { node: NodeId, param: ParamId },
    #[error("graph has no designated output")]
    NoOutput,
    #[error("gradients need a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
}

/// Convenience for building an [`Inputs`] map.
pub fn inputs<I, S>(pairs: I) -> Inputs
where
    I: IntoIterator<Item = (S, Tensor)>,
    S: Into<String>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v)).collect()
}
