//! Core of the layer-wise noise stability regularization (LNSR) toolkit.
//!
//! The crate is `no_std` and only needs an allocator. It contains a small
//! reverse-mode autodiff engine, a toy transformer encoder with injection and
//! recording taps, standard and in-manifold noise samplers, the layer-wise
//! noise stability objective, the training loop, and the numerical oracles
//! used to check the second-order expansion of the regularizer.
//!
//! File formats, configuration, benchmarks and the command-line interface
//! live in the companion `lnsr` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod noise;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
