//! MC-dropout generative adversarial networks on synthetic mixtures.
//!
//! The layers build on each other: [`autodiff`] (tensors and a tape),
//! [`nn`] (maskable MLPs, optimizers), [`prbgan`] (objectives and training
//! steps), [`synthdata`], [`eval`] and the [`cli`] harness. Everything is
//! generic over [`scalar::Scalar`]; the aliases below fix it to `f64`.

// Negated comparisons are the NaN-rejecting form of range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod prbgan;
pub mod scalar;
pub mod synthdata;

pub use error::{Error, Result};

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type DiscParams = prbgan::DiscParams<f64>;
pub type GanModel = prbgan::GanModel<f64>;
