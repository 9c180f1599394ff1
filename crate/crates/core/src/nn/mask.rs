use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layer::Architecture;

/// Drop probability per maskable layer: one shared value with optional
/// per-layer overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub default: f64,
    pub overrides: Vec<(usize, f64)>,
}

impl DropoutRates {
    pub fn uniform(p: f64) -> Self {
        DropoutRates {
            default: p,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, layer: usize, p: f64) -> Self {
        self.overrides.retain(|(l, _)| *l != layer);
        self.overrides.push((layer, p));
        self
    }

    pub fn for_layer(&self, layer: usize) -> f64 {
        self.overrides
            .iter()
            .rev()
            .find(|(l, _)| *l == layer)
            .map_or(self.default, |(_, p)| *p)
    }

    pub fn validate(&self) -> Result<()> {
        for p in std::iter::once(self.default).chain(self.overrides.iter().map(|(_, p)| *p)) {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("drop probability {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.default == 0.0 && self.overrides.iter().all(|(_, p)| *p == 0.0)
    }
}

/// Keep/drop flags for the units of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitMask {
    keep: Vec<bool>,
}

impl UnitMask {
    pub fn from_keep(keep: Vec<bool>) -> Self {
        UnitMask { keep }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// One draw of every layer's unit mask, i.e. one sampled network.
/// Layers that are not maskable hold `None`, an implicit all-ones mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropoutMaskSet {
    masks: Vec<Option<UnitMask>>,
}

impl DropoutMaskSet {
    pub fn all_ones(arch: &Architecture) -> Self {
        DropoutMaskSet {
            masks: vec![None; arch.layers().len()],
        }
    }

    /// Explicit masks; `masks[i]` must be `None` for non-maskable layers and
    /// match the unit count otherwise.
    pub fn from_masks(arch: &Architecture, masks: Vec<Option<UnitMask>>) -> Result<Self> {
        if masks.len() != arch.layers().len() {
            return Err(Error::contract("one mask slot per layer required"));
        }
        for (m, l) in masks.iter().zip(arch.layers()) {
            if let Some(m) = m {
                if !l.maskable {
                    return Err(Error::contract("mask given for a non-maskable layer"));
                }
                if m.keep.len() != l.out_dim {
                    return Err(Error::Dimension {
                        op: "mask",
                        lhs: vec![m.keep.len()],
                        rhs: vec![l.out_dim],
                    });
                }
            }
        }
        Ok(DropoutMaskSet { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn layer(&self, i: usize) -> Option<&UnitMask> {
        self.masks[i].as_ref()
    }

    /// Sorted kept-unit indices of layer `i`, `None` if nothing is dropped.
    pub fn kept(&self, i: usize) -> Option<Vec<usize>> {
        let m = self.masks[i].as_ref()?;
        if m.keep.iter().all(|k| *k) {
            return None;
        }
        Some(m.keep.iter().enumerate().filter(|(_, k)| **k).map(|(j, _)| j).collect())
    }

    pub fn dropped_count(&self) -> usize {
        self.masks
            .iter()
            .flatten()
            .map(|m| m.keep.len() - m.kept_count())
            .sum()
    }

    pub fn unit_count(&self) -> usize {
        self.masks.iter().flatten().map(|m| m.keep.len()).sum()
    }
}

/// Draws a keep flag per maskable unit, kept with probability `1 - p`.
///
/// Every maskable unit consumes exactly one uniform draw, whatever `p` is,
/// so the stream position after a call depends only on the architecture.
pub fn sample_mask_set<R: Rng + ?Sized>(arch: &Architecture, rates: &DropoutRates, rng: &mut R) -> Result<DropoutMaskSet> {
    rates.validate()?;
    let masks = arch
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.maskable.then(|| {
                let p = rates.for_layer(i);
                UnitMask {
                    keep: (0..l.out_dim).map(|_| rng.random::<f64>() >= p).collect(),
                }
            })
        })
        .collect();
    Ok(DropoutMaskSet { masks })
}
