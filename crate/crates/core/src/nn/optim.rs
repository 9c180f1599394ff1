use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Hyperparameters of one optimizer. `weight_decay` scales the `‖W‖²`
/// penalty added to the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::default(),
            learning_rate: 2e-4,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::config("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: OptimizerConfig,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One descent step on `loss + weight_decay * ‖W‖²`.
///
/// Rejects mismatched shapes and non-finite gradients before touching any
/// parameter.
pub fn apply_update<S: Scalar, P: ParamSet<S>>(params: &mut P, grads: &P, opt: &mut OptimizerState<S>) -> Result<()> {
    let gs = grads.tensors();
    {
        let ps = params.tensors();
        if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::contract("gradient layout does not match parameters"));
        }
    }
    if let Some(i) = gs.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: format!("apply_update (gradient tensor {i})"),
        });
    }
    let lr = S::of(opt.config.learning_rate);
    let decay2 = S::of(2.0 * opt.config.weight_decay);
    let mut ps = params.tensors_mut();

    match opt.config.kind {
        OptimizerKind::Sgd => {
            for (p, g) in ps.iter_mut().zip(&gs) {
                for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w = *w - lr * (d + decay2 * *w);
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if opt.first_moment.is_empty() {
                opt.first_moment = gs.iter().map(|g| Tensor::zeros(g.shape())).collect();
                opt.second_moment = opt.first_moment.clone();
            }
            let t = (opt.step + 1) as i32;
            let (b1, b2, eps) = (S::of(beta1), S::of(beta2), S::of(eps));
            let c1 = S::one() - b1.powi(t);
            let c2 = S::one() - b2.powi(t);
            for (((p, g), m), v) in ps
                .iter_mut()
                .zip(&gs)
                .zip(opt.first_moment.iter_mut())
                .zip(opt.second_moment.iter_mut())
            {
                for (((w, &d), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut())
                    .zip(v.data_mut().iter_mut())
                {
                    let d = d + decay2 * *w;
                    *mi = b1 * *mi + (S::one() - b1) * d;
                    *vi = b2 * *vi + (S::one() - b2) * d * d;
                    let mh = *mi / c1;
                    let vh = *vi / c2;
                    *w = *w - lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    opt.step += 1;
    Ok(())
}

/// Running mean of gradient sets: `mean += (g - mean) / k`.
///
/// Averaging `k` identical sets returns that set bit for bit.
#[derive(Clone, Debug)]
pub struct GradientMean<P> {
    mean: Option<P>,
    count: usize,
}

impl<P> Default for GradientMean<P> {
    fn default() -> Self {
        GradientMean { mean: None, count: 0 }
    }
}

impl<P> GradientMean<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add<S: Scalar>(&mut self, grads: P) -> Result<()>
    where
        P: ParamSet<S>,
    {
        self.count += 1;
        let Some(mean) = &mut self.mean else {
            self.mean = Some(grads);
            return Ok(());
        };
        let k = S::of(self.count as f64);
        let gs = grads.tensors();
        let mut ms = mean.tensors_mut();
        if ms.len() != gs.len() {
            return Err(Error::contract("gradient sets differ in layout"));
        }
        for (m, g) in ms.iter_mut().zip(&gs) {
            if m.shape() != g.shape() {
                return Err(Error::contract("gradient sets differ in shape"));
            }
            for (a, &b) in m.data_mut().iter_mut().zip(g.data()) {
                *a = *a + (b - *a) / k;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Option<P> {
        self.mean
    }
}

/// Euclidean norm over every tensor of a parameter set.
pub fn global_norm<S: Scalar, P: ParamSet<S>>(p: &P) -> f64 {
    p.tensors()
        .iter()
        .map(|t| t.squared_norm().as_f64())
        .sum::<f64>()
        .sqrt()
}
