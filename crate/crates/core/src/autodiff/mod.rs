//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records each op as it is evaluated. Calling
//! [`Graph::backward`] on a scalar fills in gradients for every node the loss
//! depends on; nodes off the path report zero.
//!
//! ```
//! use mspac::autodiff::Graph;
//! use mspac::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod graph;
mod kernels;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckOptions, GradReport, NamedParams};
pub use graph::{sigmoid, Graph, OpKind, Var};
pub use kernels::{Padding, PoolMode};

#[cfg(test)]
mod tests;
