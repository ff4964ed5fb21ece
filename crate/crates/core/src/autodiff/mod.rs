//! Minimal reverse-mode differentiation with the handful of ops the
//! cross-modal model needs, a finite-difference checker and Adam.

mod adam;
mod grad_check;
mod graph;
mod nn;
mod tensor;

pub use adam::AdamState;
pub use grad_check::{grad_check, grad_check_at, grad_check_stats, GradCheckStats};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use nn::{
    attention, block_param_shapes, linear_embed, positional_encoding, transformer_block, BlockVars,
    BLOCK_PARAM_NAMES,
};
pub use tensor::{Scalar, Tensor};
