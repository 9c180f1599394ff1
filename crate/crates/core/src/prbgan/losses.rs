//! Discriminator scoring and every adversarial objective, as graph builders.
//!
//! All losses are minimized. Discriminator losses average over every scored
//! point, real and fake together, so with equal batch sizes the BCE term is
//! `(BCE(real, 1) + BCE(fake, 0)) / 2`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{forward, Architecture, DropoutMaskSet};
use crate::scalar::Scalar;

use super::config::GanConfig;
use super::model::DiscVars;

/// One sampled discriminator evaluated on a batch.
#[derive(Clone, Copy, Debug)]
pub struct DiscOutput {
    /// Raw logits `[B x 1]`.
    pub logit: Var,
    /// Nonnegative uncertainty `[B x 1]`, present with an uncertainty head.
    pub uncertainty: Option<Var>,
    /// Penultimate activations `[B x width]`.
    pub features: Var,
}

/// Runs the discriminator body and, if bound, the softplus uncertainty head.
pub fn disc_forward<S: Scalar>(
    g: &mut Graph<S>,
    arch: &Architecture,
    vars: &DiscVars,
    masks: &DropoutMaskSet,
    input: Var,
) -> Result<DiscOutput> {
    let fp = forward(g, arch, &vars.body, masks, input)?;
    let uncertainty = match vars.head {
        Some((w, b)) => {
            let depth = arch.layers().len();
            let keep = if depth >= 2 { masks.kept(depth - 2) } else { None };
            let raw = g.dense(fp.penultimate, w, b, keep, None)?;
            Some(g.softplus(raw)?)
        }
        None => None,
    };
    Ok(DiscOutput {
        logit: fp.output,
        uncertainty,
        features: fp.penultimate,
    })
}

/// `logit / (uncertainty + b1)`.
pub fn weighted_logit<S: Scalar>(g: &mut Graph<S>, logit: Var, uncertainty: Var, b1: S) -> Result<Var> {
    let denom = g.add_scalar(uncertainty, b1)?;
    g.div(logit, denom)
}

/// The score of one output: the weighted logit with a head, raw otherwise.
pub fn score<S: Scalar>(g: &mut Graph<S>, out: &DiscOutput, b1: S) -> Result<Var> {
    match out.uncertainty {
        Some(u) => weighted_logit(g, out.logit, u, b1),
        None => Ok(out.logit),
    }
}

fn rows<S: Scalar>(g: &Graph<S>, v: Var) -> f64 {
    g.value(v).numel() as f64
}

/// Mean over the union of two point sets given their per-set means.
fn pooled_mean<S: Scalar>(g: &mut Graph<S>, a: Var, na: f64, b: Var, nb: f64) -> Result<Var> {
    let total = na + nb;
    let wa = g.scale(a, S::of(na / total))?;
    let wb = g.scale(b, S::of(nb / total))?;
    g.add(wa, wb)
}

fn bce_real_fake<S: Scalar>(g: &mut Graph<S>, real: Var, fake: Var) -> Result<Var> {
    let (nr, nf) = (rows(g, real), rows(g, fake));
    let lr = g.bce_with_logits_const(real, S::one())?;
    let lf = g.bce_with_logits_const(fake, S::zero())?;
    pooled_mean(g, lr, nr, lf, nf)
}

/// Vanilla discriminator loss on raw logits: real scored 1, fake 0.
pub fn disc_loss_ns<S: Scalar>(g: &mut Graph<S>, real: &DiscOutput, fake: &DiscOutput) -> Result<Var> {
    bce_real_fake(g, real.logit, fake.logit)
}

fn squared_error<S: Scalar>(g: &mut Graph<S>, x: Var, target: S) -> Result<Var> {
    let shifted = if target == S::zero() { x } else { g.add_scalar(x, -target)? };
    let sq = g.square(shifted)?;
    g.mean(sq)
}

/// Least-squares discriminator loss on raw logits with targets 1 and 0.
pub fn disc_loss_ls<S: Scalar>(g: &mut Graph<S>, real: &DiscOutput, fake: &DiscOutput) -> Result<Var> {
    let (nr, nf) = (rows(g, real.logit), rows(g, fake.logit));
    let lr = squared_error(g, real.logit, S::one())?;
    let lf = squared_error(g, fake.logit, S::zero())?;
    pooled_mean(g, lr, nr, lf, nf)
}

fn head(out: &DiscOutput, op: &str) -> Result<Var> {
    out.uncertainty
        .ok_or_else(|| Error::contract(format!("{op} needs a discriminator with an uncertainty head")))
}

/// One sampled discriminator's uncertainty-aware loss: BCE on weighted
/// logits plus the mean uncertainty over all scored points.
pub fn disc_loss_v1_sample<S: Scalar>(g: &mut Graph<S>, real: &DiscOutput, fake: &DiscOutput, b1: S) -> Result<Var> {
    let (ur, uf) = (head(real, "disc_loss_v1")?, head(fake, "disc_loss_v1")?);
    let sr = weighted_logit(g, real.logit, ur, b1)?;
    let sf = weighted_logit(g, fake.logit, uf, b1)?;
    let bce = bce_real_fake(g, sr, sf)?;
    let (nr, nf) = (rows(g, ur), rows(g, uf));
    let mr = g.mean(ur)?;
    let mf = g.mean(uf)?;
    let penalty = pooled_mean(g, mr, nr, mf, nf)?;
    g.add(bce, penalty)
}

/// Mean of [`disc_loss_v1_sample`] over the `n_mc` sampled discriminators.
pub fn disc_loss_v1<S: Scalar>(g: &mut Graph<S>, reals: &[DiscOutput], fakes: &[DiscOutput], cfg: &GanConfig) -> Result<Var> {
    if reals.len() != cfg.n_mc || fakes.len() != cfg.n_mc {
        return Err(Error::contract(format!(
            "disc_loss_v1 got {} real and {} fake outputs for n_mc = {}",
            reals.len(),
            fakes.len(),
            cfg.n_mc
        )));
    }
    let mut terms = Vec::with_capacity(reals.len());
    for (r, f) in reals.iter().zip(fakes) {
        terms.push(disc_loss_v1_sample(g, r, f, S::of(cfg.b1))?);
    }
    mean_of(g, &terms)
}

fn mean_of<S: Scalar>(g: &mut Graph<S>, terms: &[Var]) -> Result<Var> {
    let mut acc = *terms.first().ok_or_else(|| Error::contract("mean of zero terms"))?;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, S::one() / S::of(terms.len() as f64))
}

/// Non-saturating generator loss `BCE(D(G(z)), 1)`.
pub fn gen_loss_ns<S: Scalar>(g: &mut Graph<S>, fake: &DiscOutput) -> Result<Var> {
    g.bce_with_logits_const(fake.logit, S::one())
}

/// Least-squares generator loss `mean((D(G(z)) - 1)^2)`.
pub fn gen_loss_ls<S: Scalar>(g: &mut Graph<S>, fake: &DiscOutput) -> Result<Var> {
    squared_error(g, fake.logit, S::one())
}

/// Non-saturating generator loss on weighted logits.
pub fn gen_loss_v1<S: Scalar>(g: &mut Graph<S>, fake: &DiscOutput, b1: S) -> Result<Var> {
    let s = weighted_logit(g, fake.logit, head(fake, "gen_loss_v1")?, b1)?;
    g.bce_with_logits_const(s, S::one())
}

/// Batch mean of `var_n / (mean_n^2 + b2)`, the statistics taken per point
/// across the score columns (one `[B x 1]` column per sampled discriminator).
pub fn variance_reward<S: Scalar>(g: &mut Graph<S>, scores: &[Var], b2: S) -> Result<Var> {
    let set = g.concat_cols(scores)?;
    let var = g.row_variance(set)?;
    let mu = g.row_mean(set)?;
    let mu2 = g.square(mu)?;
    let denom = g.add_scalar(mu2, b2)?;
    let ratio = g.div(var, denom)?;
    g.mean(ratio)
}

/// Score-set-variance generator loss over `N >= 2` sampled discriminators
/// scoring the same generated batch:
/// `mean_n BCE(s_n, 1) - lambda_var * variance_reward(s, b2)`.
///
/// Scores are weighted logits when the outputs carry an uncertainty head and
/// raw logits otherwise.
pub fn gen_loss_v2<S: Scalar>(g: &mut Graph<S>, fakes: &[DiscOutput], cfg: &GanConfig) -> Result<Var> {
    if fakes.len() < 2 {
        return Err(Error::config("the score-set variance needs at least two sampled discriminators"));
    }
    let b1 = S::of(cfg.b1);
    let scores = fakes.iter().map(|f| score(g, f, b1)).collect::<Result<Vec<_>>>()?;
    let set = g.concat_cols(&scores)?;
    let bce = g.bce_with_logits_const(set, S::one())?;
    let reward = variance_reward(g, &scores, S::of(cfg.b2))?;
    let weighted = g.scale(reward, S::of(cfg.lambda_var))?;
    g.sub(bce, weighted)
}
