//! Reverse-mode differentiation for small convolutional networks on one CPU.
//!
//! Tensors are dense and row-major. Convolutions unfold their input with
//! `im2col` and run through `matrixmultiply`'s GEMM kernels, both forward and
//! backward. The same code runs in `f32` for training and in `f64` for
//! finite-difference gradient checks (see [`check`]).

pub mod check;
mod error;
mod graph;
mod scalar;
mod tensor;

pub use error::{AutogradError, Result};
pub use graph::{col2im, im2col, Conv2dGeom, Gradients, Graph, Var};
pub use scalar::{gemm, Scalar, Trans};
pub use tensor::Tensor;
