//! Differentially private training engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`ops`]: dense `f64` tensors and the layer primitives with
//!   explicit forward/backward passes.
//! * [`nn`]: the convolutional network, per-sample gradients and the momentum
//!   optimizer.
//! * [`dp`]: L2 clipping, Gaussian noising and Poisson lot sampling.
//! * [`accountant`]: Rényi-DP accounting of the subsampled Gaussian mechanism
//!   and conversion to `(ε, δ)`.
//! * [`schedule`]: one-cycle and plateau learning-rate policies.
//! * [`data`]: MNIST IDX parsing, normalization and stratified subsets.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod dp;
pub mod error;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
