//! MLPs whose hidden units can be dropped by sampled Bernoulli masks, their
//! initialization, optimizers and checkpoints.
//!
//! A [`DropoutMaskSet`] is one sample from the variational family over
//! network weights: the deterministic parameters times a diagonal 0/1 mask
//! per hidden layer. The Gaussian prior's KL term becomes the optimizer's L2
//! `weight_decay`.

pub mod checkpoint;
mod layer;
mod mask;
mod optim;

pub use layer::{forward, xavier_init, xavier_init_with, Activation, Architecture, ForwardPass, LayerParams, LayerSpec, MlpParams, MlpVars};
pub use mask::{sample_mask_set, DropoutMaskSet, DropoutRates, UnitMask};
pub use optim::{apply_update, global_norm, GradientMean, OptimizerConfig, OptimizerKind, OptimizerState};

use crate::autodiff::Tensor;

/// Ordered collection of parameter tensors. Gradients use the same type.
pub trait ParamSet<S>: Clone {
    fn tensors(&self) -> Vec<&Tensor<S>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>>;
}
