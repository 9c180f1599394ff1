use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mask::DropoutMaskSet;
use super::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Linear,
}

/// One fully connected layer. `maskable` layers may have output units
/// dropped by a [`DropoutMaskSet`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub maskable: bool,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, maskable: bool) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!("layer extents must be positive, got {in_dim}x{out_dim}")));
        }
        if let Activation::LeakyRelu(slope) = activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::config(format!("leaky-relu slope {slope} outside (0, 1)")));
            }
        }
        // A dropped unit must emit exactly zero; sigmoid(0) = 0.5 does not.
        if maskable && activation == Activation::Sigmoid {
            return Err(Error::config("sigmoid layers cannot carry a dropout mask"));
        }
        Ok(LayerSpec {
            in_dim,
            out_dim,
            activation,
            maskable,
        })
    }
}

/// Validated chain of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("architecture needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::config(format!(
                    "layer chain breaks: {} outputs feed {} inputs",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Architecture { layers })
    }

    /// Plain MLP: maskable hidden layers with `hidden` activation, then an
    /// unmasked linear output layer.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, hidden_activation: Activation) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &w in hidden {
            layers.push(LayerSpec::new(prev, w, hidden_activation, true)?);
            prev = w;
        }
        layers.push(LayerSpec::new(prev, output, Activation::Linear, false)?);
        Architecture::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Width of the representation feeding the last layer.
    pub fn penultimate_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].in_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    /// `[in_dim x out_dim]`
    pub weight: Tensor<S>,
    /// `[out_dim]`
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<S> {
    pub layers: Vec<LayerParams<S>>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn zeros(arch: &Architecture) -> Self {
        MlpParams {
            layers: arch
                .layers()
                .iter()
                .map(|l| LayerParams {
                    weight: Tensor::zeros(&[l.in_dim, l.out_dim]),
                    bias: Tensor::zeros(&[l.out_dim]),
                })
                .collect(),
        }
    }

    pub fn check_matches(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.layers().len() {
            return Err(Error::contract(format!(
                "parameters have {} layers, architecture {}",
                self.layers.len(),
                arch.layers().len()
            )));
        }
        for (p, l) in self.layers.iter().zip(arch.layers()) {
            if p.weight.shape() != [l.in_dim, l.out_dim] || p.bias.shape() != [l.out_dim] {
                return Err(Error::Dimension {
                    op: "mlp params",
                    lhs: p.weight.shape().to_vec(),
                    rhs: vec![l.in_dim, l.out_dim],
                });
            }
        }
        Ok(())
    }

    /// Registers every tensor in `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Result<MlpVars> {
        let leaf = |g: &mut Graph<S>, t: &Tensor<S>| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layers.push((leaf(g, &l.weight)?, leaf(g, &l.bias)?));
        }
        Ok(MlpVars { layers })
    }

    /// [`MlpParams::bind`] without copying; recover the tensors with
    /// [`MlpVars::reclaim`].
    pub fn bind_owned(self, g: &mut Graph<S>, trainable: bool) -> Result<MlpVars> {
        let leaf = |g: &mut Graph<S>, t: Tensor<S>| if trainable { g.param(t) } else { g.constant(t) };
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers {
            layers.push((leaf(g, l.weight)?, leaf(g, l.bias)?));
        }
        Ok(MlpVars { layers })
    }
}

impl<S: Scalar> ParamSet<S> for MlpParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Graph handles of one bound [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Gradients accumulated in `g`, shaped like the parameters.
    pub fn grads<S: Scalar>(&self, g: &Graph<S>) -> MlpParams<S> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| LayerParams {
                    weight: g.grad_or_zeros(w),
                    bias: g.grad_or_zeros(b),
                })
                .collect(),
        }
    }

    /// [`MlpVars::grads`] moving the gradients out of `g`.
    pub fn take_grads<S: Scalar>(&self, g: &mut Graph<S>) -> MlpParams<S> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| LayerParams {
                    weight: g.take_grad(w),
                    bias: g.take_grad(b),
                })
                .collect(),
        }
    }

    /// Moves the bound parameter values back out of `g`.
    pub fn reclaim<S: Scalar>(&self, g: &mut Graph<S>) -> MlpParams<S> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| LayerParams {
                    weight: g.take_value(w),
                    bias: g.take_value(b),
                })
                .collect(),
        }
    }
}

/// Output logits/values and the representation feeding the last layer.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub output: Var,
    pub penultimate: Var,
}

/// Weights uniform in `±sqrt(6 / (in + out))`, biases zero.
pub fn xavier_init<S: Scalar>(arch: &Architecture, seed: u64) -> MlpParams<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_init_with(arch, &mut rng)
}

pub fn xavier_init_with<S: Scalar, R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> MlpParams<S> {
    let layers = arch
        .layers()
        .iter()
        .map(|l| {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            let data = (0..l.in_dim * l.out_dim)
                .map(|_| S::of(rng.random_range(-bound..=bound)))
                .collect();
            LayerParams {
                weight: Tensor::new(vec![l.in_dim, l.out_dim], data).expect("extent"),
                bias: Tensor::zeros(&[l.out_dim]),
            }
        })
        .collect();
    MlpParams { layers }
}

/// One sampled network: `h <- act(((h ⊙ m_prev) W + b) ⊙ m)` per layer.
///
/// A dropped unit emits exactly zero and the following layer never reads
/// it, so its outgoing weight row has no influence. The final layer returns
/// raw values (logits for a discriminator).
pub fn forward<S: Scalar>(
    g: &mut Graph<S>,
    arch: &Architecture,
    vars: &MlpVars,
    masks: &DropoutMaskSet,
    input: Var,
) -> Result<ForwardPass> {
    if masks.len() != arch.layers().len() {
        return Err(Error::contract(format!(
            "mask set covers {} layers, architecture has {}",
            masks.len(),
            arch.layers().len()
        )));
    }
    let mut h = input;
    let mut penultimate = input;
    let last = arch.layers().len() - 1;
    for (i, (spec, &(w, b))) in arch.layers().iter().zip(&vars.layers).enumerate() {
        if i == last {
            penultimate = h;
        }
        let in_keep = if i == 0 { None } else { masks.kept(i - 1) };
        let out_keep = masks.kept(i);
        let z = g.dense(h, w, b, in_keep, out_keep)?;
        h = match spec.activation {
            Activation::LeakyRelu(slope) => g.leaky_relu(z, S::of(slope))?,
            Activation::Sigmoid => g.sigmoid(z)?,
            Activation::Linear => z,
        };
    }
    Ok(ForwardPass { output: h, penultimate })
}
