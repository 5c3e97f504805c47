//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Operations append nodes
//! holding their output value and an exact local backward rule; calling
//! [`Graph::backward`] on a scalar node fills in gradients for every node
//! that depends on a leaf created with [`Graph::leaf`] or [`Graph::param`].
//!
//! Binary elementwise operations broadcast numpy-style (right-aligned, size-1
//! extents stretch), and their gradients sum back over the broadcast axes.
//! Rectifiers at 0, clamps at their bounds and the row norm at the origin
//! use a zero subgradient.

mod check;
mod graph;
mod param;
mod tensor;

pub use check::{check_param_gradients, grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use param::{HasParams, Param};
pub use tensor::Tensor;
