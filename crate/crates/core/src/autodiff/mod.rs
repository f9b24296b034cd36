//! Minimal reverse-mode differentiation: a tape of matrix nodes, the layer
//! set the affect models need, Glorot initialisation, Adam and a binary
//! checkpoint format. Everything is 64-bit.

mod adam;
pub mod checkpoint;
mod graph;
mod layers;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub(crate) use graph::softmax;
pub use graph::{Gradients, Graph, Var};
pub use layers::{dense, dropout, gru_step, GruCell, GruVars};
pub use params::{glorot_bound, init_params, ParamDecl, ParamKind, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("dropout probability {0} outside [0, 1)")]
    BadProbability(f64),
}
