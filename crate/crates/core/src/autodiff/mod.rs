//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every op appends a node holding its value and the
//! rule to push gradients to its parents. Only one-element tensors broadcast
//! against others; any other shape disagreement is a dimension error.

mod graph;
mod ops;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
