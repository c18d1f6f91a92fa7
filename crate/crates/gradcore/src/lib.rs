//! Minimal reverse-mode differentiation for small convolutional networks.
//!
//! Values live on an append-only [`Graph`] tape. Every operation pushes a
//! node and returns a [`Var`] handle; [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into leaf nodes. Trainable weights are
//! kept outside the tape in a [`ParamStore`] and bound to a fresh graph for
//! every step, which keeps the tape free of interior mutability.
//!
//! The engine is generic over [`Real`] so the same kernels run in `f32` for
//! training and in `f64` for finite-difference checks.

mod adam;
mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod graph;
mod ops;
mod params;
mod real;
mod resize;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use error::{GradError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use params::ParamStore;
pub use real::Real;
pub use resize::bilinear_resize;
pub use tensor::Tensor;
