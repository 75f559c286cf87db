//! Reverse-mode automatic differentiation over dense, row-major `f64` tensors.
//!
//! Every backward rule is itself written in terms of differentiable [`Var`]
//! operations, so gradients can be differentiated again. Second-order terms
//! such as the WGAN gradient penalty are built on top of [`grad`] with
//! `create_graph = true`.
//!
//! All kernels are single-threaded and iterate in a fixed order, which makes
//! every forward and backward pass bitwise reproducible.

mod kernels;
mod ops;
mod tensor;
mod var;

pub use kernels::conv_out_size;
pub use ops::{concat, conv2d, conv2d_input_grad, conv2d_weight_grad};
pub use tensor::{numel, Tensor};
pub use var::{enable_grad, grad, is_grad_enabled, no_grad, Var};
