//! Synthetic data: Gaussian mixtures with diagonal covariance and latent
//! noise for the generator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weight: f64,
}

/// Mixture of axis-aligned Gaussians. Weights are normalized to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    components: Vec<Component>,
    dimension: usize,
}

impl MixtureSpec {
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::config("mixture needs at least one component"))?;
        let dimension = first.mean.len();
        if dimension == 0 {
            return Err(Error::config("mixture dimension must be >= 1"));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dimension || c.std.len() != dimension {
                return Err(Error::config(format!("component {i} does not have dimension {dimension}")));
            }
            if c.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::config(format!("component {i} has a non-positive std")));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::config(format!("component {i} has a non-positive weight")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config(format!("component {i} has a non-finite mean")));
            }
        }
        // Weights already summing to 1 are kept, so normalizing twice is a no-op.
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            for c in &mut components {
                c.weight /= total;
            }
        }
        Ok(MixtureSpec { components, dimension })
    }

    /// Equal-weight mixture from per-component means and stds.
    pub fn equal_weights(means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(Error::config("means and stds list different component counts"));
        }
        MixtureSpec::new(
            means
                .into_iter()
                .zip(stds)
                .map(|(mean, std)| Component { mean, std, weight: 1.0 })
                .collect(),
        )
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Per-coordinate mean `Σ wᵢ μᵢ`.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dimension)
            .map(|d| self.components.iter().map(|c| c.weight * c.mean[d]).sum())
            .collect()
    }

    /// Per-coordinate standard deviation of the whole mixture.
    pub fn std(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.dimension)
            .map(|d| {
                let second: f64 = self
                    .components
                    .iter()
                    .map(|c| c.weight * (c.std[d] * c.std[d] + c.mean[d] * c.mean[d]))
                    .sum();
                (second - mean[d] * mean[d]).max(0.0).sqrt()
            })
            .collect()
    }
}

/// The 1-D five-component benchmark: means 10, 20, 60, 80, 110 with stds
/// 3, 3, 2, 2, 1, equally weighted.
pub fn paper_mixture() -> MixtureSpec {
    let means = [10.0, 20.0, 60.0, 80.0, 110.0];
    let stds = [3.0, 3.0, 2.0, 2.0, 1.0];
    MixtureSpec::equal_weights(
        means.iter().map(|m| vec![*m]).collect(),
        stds.iter().map(|s| vec![*s]).collect(),
    )
    .expect("static mixture is valid")
}

/// 5x5 grid of 2-D Gaussians at `(2i, 2j)`, `i, j ∈ {-2..2}`, std 0.05.
pub fn grid_mixture_2d() -> MixtureSpec {
    let mut means = Vec::with_capacity(25);
    for i in -2..=2 {
        for j in -2..=2 {
            means.push(vec![2.0 * i as f64, 2.0 * j as f64]);
        }
    }
    let stds = vec![vec![0.05, 0.05]; 25];
    MixtureSpec::equal_weights(means, stds).expect("static mixture is valid")
}

fn pick_component<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in spec.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    spec.components.len() - 1
}

/// Draws `n` rows together with the component index of each.
pub fn sample_labeled<S: Scalar, R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<(Tensor<S>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::contract("sample count must be >= 1"));
    }
    let d = spec.dimension;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = pick_component(spec, rng);
        let c = &spec.components[k];
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(S::of(c.mean[j] + c.std[j] * z));
        }
        labels.push(k);
    }
    Ok((Tensor::new(vec![n, d], data)?, labels))
}

/// `n x dimension` draws from the mixture.
pub fn sample<S: Scalar, R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<Tensor<S>> {
    sample_labeled(spec, n, rng).map(|(t, _)| t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentPrior {
    /// i.i.d. uniform on the open interval (-1, 1).
    #[default]
    Uniform,
    /// i.i.d. standard normal.
    Gaussian,
}

pub fn sample_latent<S: Scalar, R: Rng + ?Sized>(dim: usize, n: usize, prior: LatentPrior, rng: &mut R) -> Result<Tensor<S>> {
    if dim == 0 || n == 0 {
        return Err(Error::contract("latent sample needs dim >= 1 and n >= 1"));
    }
    let data = (0..dim * n)
        .map(|_| {
            let v = match prior {
                LatentPrior::Uniform => loop {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    if u > -1.0 {
                        break u;
                    }
                },
                LatentPrior::Gaussian => rng.sample(StandardNormal),
            };
            S::of(v)
        })
        .collect();
    Tensor::new(vec![n, dim], data)
}
