//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built fresh for every training or inference step. Each
//! operation appends a node holding its forward value; [`Graph::backward`]
//! then walks the nodes in reverse and accumulates gradients, summing over
//! every use of a node.
//!
//! ```
//! use ner_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![3.0]));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_gradient, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, Operator};
#[cfg(test)]
pub(crate) use graph::sigmoid;
pub use tensor::Tensor;

