use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DropoutRates, OptimizerConfig};
use crate::synthdata::LatentPrior;

/// Training objective family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Non-saturating GAN, deterministic networks.
    VanillaNs,
    /// Least-squares GAN, deterministic networks.
    VanillaLs,
    /// MC-dropout on both networks, averaged gradients.
    Prb,
    /// Dropout discriminator with an uncertainty head and weighted logits.
    PrbV1,
    /// `PrbV1` plus the score-set variance reward for the generator.
    PrbV2,
    /// Generator trained on the sliced Wasserstein distance of discriminator
    /// features.
    Swgan,
    /// `Swgan` averaged over dropout-sampled discriminators.
    PrbSwgan,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::VanillaNs,
        Variant::VanillaLs,
        Variant::Prb,
        Variant::PrbV1,
        Variant::PrbV2,
        Variant::Swgan,
        Variant::PrbSwgan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VanillaNs => "vanilla_ns",
            Variant::VanillaLs => "vanilla_ls",
            Variant::Prb => "prb",
            Variant::PrbV1 => "prb_v1",
            Variant::PrbV2 => "prb_v2",
            Variant::Swgan => "swgan",
            Variant::PrbSwgan => "prb_swgan",
        }
    }

    /// Whether the generator carries dropout masks.
    pub fn gen_dropout(self) -> bool {
        self == Variant::Prb
    }

    /// Whether the discriminator carries dropout masks.
    pub fn disc_dropout(self) -> bool {
        matches!(self, Variant::Prb | Variant::PrbV1 | Variant::PrbV2 | Variant::PrbSwgan)
    }

    pub fn uses_uncertainty(self) -> bool {
        matches!(self, Variant::PrbV1 | Variant::PrbV2)
    }

    pub fn is_sliced(self) -> bool {
        matches!(self, Variant::Swgan | Variant::PrbSwgan)
    }

    pub fn is_probabilistic(self) -> bool {
        self.gen_dropout() || self.disc_dropout()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Hyperparameters of one GAN run.
///
/// `lambda_var` weighs the score-set variance reward; the optimizer step size
/// is `optimizer.learning_rate`. The variance reward uses uncertainty-weighted
/// logits when the discriminator has an uncertainty head and raw logits
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub variant: Variant,
    /// Drop probability shared by every maskable layer.
    pub p: f64,
    /// Per-layer drop-probability overrides, by layer index.
    pub p_overrides: Vec<(usize, f64)>,
    /// MC samples per step (N).
    pub n_mc: usize,
    pub batch: usize,
    pub latent_dim: usize,
    pub latent_prior: LatentPrior,
    /// Bias added to the uncertainty before dividing the logit.
    pub b1: f64,
    /// Bias added to the squared score mean in the variance reward.
    pub b2: f64,
    pub lambda_var: f64,
    pub n_projections: usize,
    /// Dropout-sampled discriminators averaged by `prb_swgan`.
    pub m_slice: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            variant: Variant::Prb,
            p: 0.4,
            p_overrides: Vec::new(),
            n_mc: 20,
            batch: 64,
            latent_dim: 1,
            latent_prior: LatentPrior::Uniform,
            b1: 0.3,
            b2: 0.3,
            lambda_var: 1.0,
            n_projections: 32,
            m_slice: 4,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.n_mc < 1 {
            return fail("n_mc must be >= 1".into());
        }
        if self.batch < 1 {
            return fail("batch must be >= 1".into());
        }
        if self.latent_dim < 1 {
            return fail("latent_dim must be >= 1".into());
        }
        if !(self.b1 > 0.0) {
            return fail(format!("b1 must be > 0, got {}", self.b1));
        }
        if !(self.b2 > 0.0) {
            return fail(format!("b2 must be > 0, got {}", self.b2));
        }
        if !(self.lambda_var >= 0.0) {
            return fail(format!("lambda_var must be >= 0, got {}", self.lambda_var));
        }
        if self.variant == Variant::PrbV2 && self.n_mc < 2 {
            return fail("prb_v2 needs n_mc >= 2: the score-set variance of one sample is undefined".into());
        }
        if self.variant.is_sliced() && self.n_projections < 1 {
            return fail("sliced variants need n_projections >= 1".into());
        }
        if self.m_slice < 1 {
            return fail("m_slice must be >= 1".into());
        }
        self.rates().validate()?;
        self.optimizer.validate()
    }

    pub fn rates(&self) -> DropoutRates {
        let mut r = DropoutRates::uniform(self.p);
        for &(layer, p) in &self.p_overrides {
            r = r.with_override(layer, p);
        }
        r
    }

    pub fn gen_rates(&self) -> DropoutRates {
        if self.variant.gen_dropout() {
            self.rates()
        } else {
            DropoutRates::uniform(0.0)
        }
    }

    pub fn disc_rates(&self) -> DropoutRates {
        if self.variant.disc_dropout() {
            self.rates()
        } else {
            DropoutRates::uniform(0.0)
        }
    }

    /// MC samples per step; deterministic variants use one.
    pub fn mc_samples(&self) -> usize {
        if self.variant.is_probabilistic() {
            self.n_mc
        } else {
            1
        }
    }

    /// Discriminator samples averaged by the sliced objective.
    pub fn slice_samples(&self) -> usize {
        match self.variant {
            Variant::PrbSwgan => self.m_slice,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("dcgan".parse::<Variant>().is_err());
    }

    #[test]
    fn validation() {
        let ok = GanConfig::default();
        ok.validate().unwrap();
        for bad in [
            GanConfig { n_mc: 0, ..ok.clone() },
            GanConfig { batch: 0, ..ok.clone() },
            GanConfig { b1: 0.0, ..ok.clone() },
            GanConfig { b2: -1.0, ..ok.clone() },
            GanConfig { lambda_var: -0.1, ..ok.clone() },
            GanConfig { latent_dim: 0, ..ok.clone() },
            GanConfig { p: 1.0, ..ok.clone() },
            GanConfig { variant: Variant::PrbV2, n_mc: 1, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn which_networks_drop() {
        let c = GanConfig { variant: Variant::PrbV1, ..GanConfig::default() };
        assert!(c.gen_rates().is_zero());
        assert!(!c.disc_rates().is_zero());
        let c = GanConfig { variant: Variant::VanillaNs, ..GanConfig::default() };
        assert!(c.gen_rates().is_zero() && c.disc_rates().is_zero());
        assert_eq!(c.mc_samples(), 1);
        let c = GanConfig { variant: Variant::Prb, ..GanConfig::default() };
        assert!(!c.gen_rates().is_zero() && c.mc_samples() == 20);
    }
}
