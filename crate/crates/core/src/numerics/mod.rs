//! Dense `f64` tensors and reverse-mode automatic differentiation.

mod graph;
mod tensor;

pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
