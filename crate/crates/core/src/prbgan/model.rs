use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{xavier_init_with, Activation, Architecture, LayerParams, LayerSpec, MlpParams, MlpVars, OptimizerState, ParamSet};
use crate::scalar::Scalar;

use super::config::GanConfig;

/// Discriminator parameters: the logit network and, for uncertainty-aware
/// variants, a one-unit head reading the penultimate representation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscParams<S> {
    pub body: MlpParams<S>,
    pub head: Option<LayerParams<S>>,
}

impl<S: Scalar> DiscParams<S> {
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Result<DiscVars> {
        let body = self.body.bind(g, trainable)?;
        let head = match &self.head {
            Some(h) => {
                let (w, b) = if trainable {
                    (g.param(h.weight.clone())?, g.param(h.bias.clone())?)
                } else {
                    (g.constant(h.weight.clone())?, g.constant(h.bias.clone())?)
                };
                Some((w, b))
            }
            None => None,
        };
        Ok(DiscVars { body, head })
    }

    /// [`DiscParams::bind`] without copying; see [`DiscVars::reclaim`].
    pub fn bind_owned(self, g: &mut Graph<S>, trainable: bool) -> Result<DiscVars> {
        let body = self.body.bind_owned(g, trainable)?;
        let head = match self.head {
            Some(h) if trainable => Some((g.param(h.weight)?, g.param(h.bias)?)),
            Some(h) => Some((g.constant(h.weight)?, g.constant(h.bias)?)),
            None => None,
        };
        Ok(DiscVars { body, head })
    }
}

impl<S: Scalar> ParamSet<S> for DiscParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut t = self.body.tensors();
        if let Some(h) = &self.head {
            t.extend([&h.weight, &h.bias]);
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut t = self.body.tensors_mut();
        if let Some(h) = &mut self.head {
            t.extend([&mut h.weight, &mut h.bias]);
        }
        t
    }
}

#[derive(Clone, Debug)]
pub struct DiscVars {
    pub body: MlpVars,
    pub head: Option<(Var, Var)>,
}

impl DiscVars {
    pub fn grads<S: Scalar>(&self, g: &Graph<S>) -> DiscParams<S> {
        DiscParams {
            body: self.body.grads(g),
            head: self.head.map(|(w, b)| LayerParams {
                weight: g.grad_or_zeros(w),
                bias: g.grad_or_zeros(b),
            }),
        }
    }

    pub fn take_grads<S: Scalar>(&self, g: &mut Graph<S>) -> DiscParams<S> {
        DiscParams {
            body: self.body.take_grads(g),
            head: self.head.map(|(w, b)| LayerParams {
                weight: g.take_grad(w),
                bias: g.take_grad(b),
            }),
        }
    }

    pub fn reclaim<S: Scalar>(&self, g: &mut Graph<S>) -> DiscParams<S> {
        DiscParams {
            body: self.body.reclaim(g),
            head: self.head.map(|(w, b)| LayerParams {
                weight: g.take_value(w),
                bias: g.take_value(b),
            }),
        }
    }

    /// Handles in [`ParamSet`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = mlp_var_list(&self.body);
        if let Some((w, b)) = self.head {
            v.extend([w, b]);
        }
        v
    }
}

/// Handles of an [`MlpVars`] in [`ParamSet`] order.
pub fn mlp_var_list(vars: &MlpVars) -> Vec<Var> {
    vars.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
}

/// Generator and discriminator layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub gen: Architecture,
    pub disc: Architecture,
}

impl Networks {
    pub fn new(gen: Architecture, disc: Architecture) -> Result<Self> {
        if gen.output_dim() != disc.input_dim() {
            return Err(Error::config(format!(
                "generator emits {} values, discriminator reads {}",
                gen.output_dim(),
                disc.input_dim()
            )));
        }
        if disc.output_dim() != 1 {
            return Err(Error::config("discriminator must emit one logit"));
        }
        if disc.layers().last().is_some_and(|l| l.activation != Activation::Linear) {
            return Err(Error::config("discriminator output layer must be linear (raw logits)"));
        }
        Ok(Networks { gen, disc })
    }

    /// Two MLPs with `layers` fully connected layers each, `width` hidden
    /// units and leaky-relu hidden activations.
    pub fn mlp(latent_dim: usize, data_dim: usize, layers: usize, width: usize, slope: f64) -> Result<Self> {
        if layers < 1 {
            return Err(Error::config("networks need at least one layer"));
        }
        let hidden = vec![width; layers - 1];
        let act = Activation::LeakyRelu(slope);
        Networks::new(
            Architecture::mlp(latent_dim, &hidden, data_dim, act)?,
            Architecture::mlp(data_dim, &hidden, 1, act)?,
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.gen.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.gen.output_dim()
    }
}

/// Parameters and optimizer state of both players.
#[derive(Clone, Debug)]
pub struct GanModel<S> {
    pub nets: Networks,
    pub gen: MlpParams<S>,
    pub disc: DiscParams<S>,
    pub gen_opt: OptimizerState<S>,
    pub disc_opt: OptimizerState<S>,
}

impl<S: Scalar> GanModel<S> {
    /// Xavier-initialized model; the uncertainty head exists only for
    /// variants that use it.
    pub fn new(nets: Networks, cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        if nets.latent_dim() != cfg.latent_dim {
            return Err(Error::config(format!(
                "generator reads {} latent values, latent_dim is {}",
                nets.latent_dim(),
                cfg.latent_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(super::step::STREAM_INIT);
        let gen = xavier_init_with(&nets.gen, &mut rng);
        let body = xavier_init_with(&nets.disc, &mut rng);
        let head = if cfg.variant.uses_uncertainty() {
            let spec = LayerSpec::new(nets.disc.penultimate_dim(), 1, Activation::Linear, false)?;
            let arch = Architecture::new(vec![spec])?;
            xavier_init_with::<S, _>(&arch, &mut rng).layers.pop()
        } else {
            None
        };
        Ok(GanModel {
            nets,
            gen,
            disc: DiscParams { body, head },
            gen_opt: OptimizerState::new(cfg.optimizer)?,
            disc_opt: OptimizerState::new(cfg.optimizer)?,
        })
    }
}
