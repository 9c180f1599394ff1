//! Training steps.
//!
//! A discriminator step fixes one sampled generator and averages the
//! gradients of `N` sampled discriminators; a generator step fixes one
//! sampled discriminator and averages over `N` sampled generators. The
//! score-set-variance variant instead scores one generator with `N`
//! discriminators inside a single loss, and the sliced variants average the
//! sliced distance over `m_slice` sampled discriminators.
//!
//! Every random quantity comes from its own ChaCha8 stream, so variants that
//! skip a draw never shift the draws of another stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{apply_update, forward, global_norm, sample_mask_set, Architecture, DropoutMaskSet, GradientMean, MlpParams};
use crate::scalar::Scalar;
use crate::synthdata::sample_latent;

use super::config::{GanConfig, Variant};
use super::losses::{
    disc_forward, disc_loss_ls, DiscOutput, disc_loss_ns, disc_loss_v1_sample, gen_loss_ls, gen_loss_ns, gen_loss_v1, gen_loss_v2, score,
};
use super::model::{DiscParams, GanModel};
use super::sliced::{random_projections, sliced_w_distance, sliced_w_graph};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_LATENT: u64 = 1;
pub const STREAM_GEN_MASKS: u64 = 2;
pub const STREAM_DISC_MASKS: u64 = 3;
pub const STREAM_PROJECTIONS: u64 = 4;
pub const STREAM_DATA: u64 = 5;
pub const STREAM_EVAL: u64 = 6;
pub const STREAM_EVAL_MASKS: u64 = 7;

/// Stream `id` of the generator family seeded by `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random streams consumed by the training steps.
#[derive(Clone, Debug)]
pub struct StepRng {
    pub latent: ChaCha8Rng,
    pub gen_masks: ChaCha8Rng,
    pub disc_masks: ChaCha8Rng,
    pub projections: ChaCha8Rng,
}

impl StepRng {
    pub fn new(seed: u64) -> Self {
        StepRng {
            latent: stream(seed, STREAM_LATENT),
            gen_masks: stream(seed, STREAM_GEN_MASKS),
            disc_masks: stream(seed, STREAM_DISC_MASKS),
            projections: stream(seed, STREAM_PROJECTIONS),
        }
    }
}

/// Telemetry of one step. A discriminator step fills the `disc_*`, logit,
/// score-set and uncertainty fields; a generator step fills `gen_*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub mean_logit_real: f64,
    pub mean_logit_fake: f64,
    /// Batch mean of the per-point population variance of the fake scores
    /// across sampled discriminators.
    pub score_set_variance: f64,
    pub uncertainty_mean: f64,
    pub disc_grad_norm: f64,
    pub gen_grad_norm: f64,
}

impl StepReport {
    /// Discriminator fields of `disc` with generator fields of `gen`.
    pub fn combine(disc: &StepReport, gen: &StepReport) -> StepReport {
        StepReport {
            gen_loss: gen.gen_loss,
            gen_grad_norm: gen.gen_grad_norm,
            ..*disc
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.disc_loss,
            self.gen_loss,
            self.mean_logit_real,
            self.mean_logit_fake,
            self.score_set_variance,
            self.uncertainty_mean,
            self.disc_grad_norm,
            self.gen_grad_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `mean += (x - mean) / k`; identical inputs give their value exactly.
#[derive(Clone, Copy, Debug, Default)]
struct Running {
    mean: f64,
    count: usize,
}

impl Running {
    fn add(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// Welford accumulation of one value per point across samples.
struct PointSpread {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: usize,
}

impl PointSpread {
    fn new(points: usize) -> Self {
        PointSpread {
            mean: vec![0.0; points],
            m2: vec![0.0; points],
            count: 0,
        }
    }

    fn add<S: Scalar>(&mut self, values: &[S]) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let x = v.as_f64();
            let d = x - *m;
            *m += d / k;
            *s += d * (x - *m);
        }
    }

    fn mean_population_variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.m2.iter().map(|s| s / self.count as f64).sum::<f64>() / self.m2.len() as f64
    }
}

fn at_sample(e: Error, what: &str, i: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{op} ({what} sample {i})"),
        },
        other => other,
    }
}

fn check_batch<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, real: &Tensor<S>) -> Result<()> {
    let (r, c) = real.dims2("real batch")?;
    if r != cfg.batch || c != model.nets.data_dim() {
        return Err(Error::Dimension {
            op: "real batch",
            lhs: real.shape().to_vec(),
            rhs: vec![cfg.batch, model.nets.data_dim()],
        });
    }
    Ok(())
}

/// Runs one sampled generator on fixed latents without recording gradients.
pub fn generate<S: Scalar>(params: &MlpParams<S>, arch: &Architecture, masks: &DropoutMaskSet, z: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false)?;
    let zv = g.constant(z.clone())?;
    let out = forward(&mut g, arch, &vars, masks, zv)?;
    Ok(g.value(out.output).clone())
}

/// `n` generated rows; every chunk of `cfg.batch` rows comes from a freshly
/// sampled generator.
pub fn sample_generator<S: Scalar, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    model: &GanModel<S>,
    cfg: &GanConfig,
    n: usize,
    latent_rng: &mut R1,
    mask_rng: &mut R2,
) -> Result<Tensor<S>> {
    if n == 0 {
        return Err(Error::contract("sample count must be >= 1"));
    }
    let d = model.nets.data_dim();
    let rates = cfg.gen_rates();
    let mut data = Vec::with_capacity(n * d);
    let mut left = n;
    while left > 0 {
        let rows = left.min(cfg.batch);
        let z = sample_latent(cfg.latent_dim, rows, cfg.latent_prior, latent_rng)?;
        let masks = sample_mask_set(&model.nets.gen, &rates, mask_rng)?;
        data.extend_from_slice(generate(&model.gen, &model.nets.gen, &masks, &z)?.data());
        left -= rows;
    }
    Tensor::new(vec![n, d], data)
}

/// Averaged discriminator gradient and telemetry, without updating.
pub fn disc_gradients<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<(DiscParams<S>, StepReport)> {
    check_batch(model, cfg, real)?;
    let nets = &model.nets;
    let z = sample_latent(cfg.latent_dim, cfg.batch, cfg.latent_prior, &mut rng.latent)?;
    let gen_masks = sample_mask_set(&nets.gen, &cfg.gen_rates(), &mut rng.gen_masks)?;
    let fake = generate(&model.gen, &nets.gen, &gen_masks, &z)?;
    let samples = if cfg.variant.disc_dropout() { cfg.n_mc } else { 1 };
    let rates = cfg.disc_rates();
    let b1 = S::of(cfg.b1);

    let stacked = real.vstack(&fake)?;
    let n = cfg.batch;

    let mut mean = GradientMean::new();
    let (mut loss, mut real_logit, mut fake_logit, mut unc) = (Running::default(), Running::default(), Running::default(), Running::default());
    let mut spread = PointSpread::new(cfg.batch);
    let mut scratch = Some(model.disc.clone());
    for i in 0..samples {
        let masks = sample_mask_set(&nets.disc, &rates, &mut rng.disc_masks)?;
        let params = scratch.take().unwrap_or_else(|| model.disc.clone());
        let run = || -> Result<_> {
            let mut g = Graph::new();
            let vars = params.bind_owned(&mut g, true)?;
            let x = g.constant(stacked.clone())?;
            let out = disc_forward(&mut g, &nets.disc, &vars, &masks, x)?;
            let (out_r, out_f) = split_output(&mut g, &out, n)?;
            let l = match cfg.variant {
                Variant::VanillaLs => disc_loss_ls(&mut g, &out_r, &out_f)?,
                Variant::PrbV1 | Variant::PrbV2 => disc_loss_v1_sample(&mut g, &out_r, &out_f, b1)?,
                _ => disc_loss_ns(&mut g, &out_r, &out_f)?,
            };
            g.backward(l)?;
            let fake_scores = score(&mut g, &out_f, b1)?;
            let u = match (out_r.uncertainty, out_f.uncertainty) {
                (Some(a), Some(b)) => Some(0.5 * (g.value(a).mean().as_f64() + g.value(b).mean().as_f64())),
                _ => None,
            };
            let stats = (
                g.value(l).item().as_f64(),
                g.value(out_r.logit).mean().as_f64(),
                g.value(out_f.logit).mean().as_f64(),
                g.value(fake_scores).data().to_vec(),
                u,
            );
            let grads = vars.take_grads(&mut g);
            scratch = Some(vars.reclaim(&mut g));
            Ok((grads, stats))
        };
        let (grads, (l, lr, lf, scores, u)) = run().map_err(|e| at_sample(e, "discriminator", i))?;
        mean.add(grads)?;
        loss.add(l);
        real_logit.add(lr);
        fake_logit.add(lf);
        spread.add(&scores);
        if let Some(u) = u {
            unc.add(u);
        }
    }
    let grads = mean.finish().expect("at least one sample");
    let report = StepReport {
        disc_loss: loss.mean,
        mean_logit_real: real_logit.mean,
        mean_logit_fake: fake_logit.mean,
        score_set_variance: spread.mean_population_variance(),
        uncertainty_mean: unc.mean,
        disc_grad_norm: global_norm(&grads),
        ..StepReport::default()
    };
    Ok((grads, report))
}

/// Splits an output over stacked `[real; fake]` rows into the two halves.
fn split_output<S: Scalar>(g: &mut Graph<S>, out: &DiscOutput, n: usize) -> Result<(DiscOutput, DiscOutput)> {
    let half = |g: &mut Graph<S>, v: Var, lo: usize, hi: usize| g.slice_rows(v, lo, hi);
    let mut parts = [None, None];
    for (k, (lo, hi)) in [(0, n), (n, 2 * n)].into_iter().enumerate() {
        let uncertainty = match out.uncertainty {
            Some(u) => Some(half(g, u, lo, hi)?),
            None => None,
        };
        parts[k] = Some(DiscOutput {
            logit: half(g, out.logit, lo, hi)?,
            uncertainty,
            features: half(g, out.features, lo, hi)?,
        });
    }
    let [r, f] = parts;
    Ok((r.expect("filled"), f.expect("filled")))
}

/// One discriminator update. Generator parameters are never touched.
pub fn disc_step<S: Scalar>(model: &mut GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<StepReport> {
    let (grads, report) = disc_gradients(model, cfg, real, rng)?;
    apply_update(&mut model.disc, &grads, &mut model.disc_opt)?;
    Ok(report)
}

/// Averaged generator gradient and telemetry, without updating. `real` is
/// read only by the sliced variants.
pub fn gen_gradients<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<(MlpParams<S>, StepReport)> {
    check_batch(model, cfg, real)?;
    let (grads, loss) = match cfg.variant {
        Variant::PrbV2 => gen_grads_score_set(model, cfg, rng)?,
        Variant::Swgan | Variant::PrbSwgan => gen_grads_sliced(model, cfg, real, rng)?,
        _ => gen_grads_standard(model, cfg, rng)?,
    };
    let report = StepReport {
        gen_loss: loss,
        gen_grad_norm: global_norm(&grads),
        ..StepReport::default()
    };
    Ok((grads, report))
}

/// One generator update. Discriminator parameters are never touched.
pub fn gen_step<S: Scalar>(model: &mut GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<StepReport> {
    let (grads, report) = gen_gradients(model, cfg, real, rng)?;
    apply_update(&mut model.gen, &grads, &mut model.gen_opt)?;
    Ok(report)
}

fn gen_grads_standard<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, rng: &mut StepRng) -> Result<(MlpParams<S>, f64)> {
    let nets = &model.nets;
    let z = sample_latent(cfg.latent_dim, cfg.batch, cfg.latent_prior, &mut rng.latent)?;
    let disc_masks = sample_mask_set(&nets.disc, &cfg.disc_rates(), &mut rng.disc_masks)?;
    let samples = if cfg.variant.gen_dropout() { cfg.n_mc } else { 1 };
    let rates = cfg.gen_rates();
    let b1 = S::of(cfg.b1);
    let mut mean = GradientMean::new();
    let mut loss = Running::default();
    let mut scratch = Some((model.gen.clone(), model.disc.clone()));
    for i in 0..samples {
        let gen_masks = sample_mask_set(&nets.gen, &rates, &mut rng.gen_masks)?;
        let (gp, dp) = scratch.take().unwrap_or_else(|| (model.gen.clone(), model.disc.clone()));
        let run = || -> Result<_> {
            let mut g = Graph::new();
            let gv = gp.bind_owned(&mut g, true)?;
            let dv = dp.bind_owned(&mut g, false)?;
            let zv = g.constant(z.clone())?;
            let fake = forward(&mut g, &nets.gen, &gv, &gen_masks, zv)?.output;
            let out = disc_forward(&mut g, &nets.disc, &dv, &disc_masks, fake)?;
            let l = match cfg.variant {
                Variant::VanillaLs => gen_loss_ls(&mut g, &out)?,
                Variant::PrbV1 => gen_loss_v1(&mut g, &out, b1)?,
                _ => gen_loss_ns(&mut g, &out)?,
            };
            g.backward(l)?;
            let grads = gv.take_grads(&mut g);
            scratch = Some((gv.reclaim(&mut g), dv.reclaim(&mut g)));
            Ok((grads, g.value(l).item().as_f64()))
        };
        let (grads, l) = run().map_err(|e| at_sample(e, "generator", i))?;
        mean.add(grads)?;
        loss.add(l);
    }
    Ok((mean.finish().expect("at least one sample"), loss.mean))
}

fn gen_grads_score_set<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, rng: &mut StepRng) -> Result<(MlpParams<S>, f64)> {
    let nets = &model.nets;
    let z = sample_latent(cfg.latent_dim, cfg.batch, cfg.latent_prior, &mut rng.latent)?;
    let gen_masks = sample_mask_set(&nets.gen, &cfg.gen_rates(), &mut rng.gen_masks)?;
    let rates = cfg.disc_rates();
    let disc_masks = (0..cfg.n_mc)
        .map(|_| sample_mask_set(&nets.disc, &rates, &mut rng.disc_masks))
        .collect::<Result<Vec<_>>>()?;
    let mut g = Graph::new();
    let gv = model.gen.bind(&mut g, true)?;
    let dv = model.disc.bind(&mut g, false)?;
    let zv = g.constant(z)?;
    let fake = forward(&mut g, &nets.gen, &gv, &gen_masks, zv)?.output;
    let outs = disc_masks
        .iter()
        .enumerate()
        .map(|(i, m)| disc_forward(&mut g, &nets.disc, &dv, m, fake).map_err(|e| at_sample(e, "discriminator", i)))
        .collect::<Result<Vec<_>>>()?;
    let l = gen_loss_v2(&mut g, &outs, cfg)?;
    g.backward(l)?;
    Ok((gv.grads(&g), g.value(l).item().as_f64()))
}

/// Draws of one sliced generator step, shared by the trainer and
/// [`prb_sliced_w_distance`].
struct SlicedDraws<S> {
    z: Tensor<S>,
    gen_masks: DropoutMaskSet,
    projections: Tensor<S>,
    disc_masks: Vec<DropoutMaskSet>,
}

fn sliced_draws<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, rng: &mut StepRng) -> Result<SlicedDraws<S>> {
    let nets = &model.nets;
    let z = sample_latent(cfg.latent_dim, cfg.batch, cfg.latent_prior, &mut rng.latent)?;
    let gen_masks = sample_mask_set(&nets.gen, &cfg.gen_rates(), &mut rng.gen_masks)?;
    let projections = random_projections(nets.disc.penultimate_dim(), cfg.n_projections, &mut rng.projections)?;
    let rates = cfg.disc_rates();
    let disc_masks = (0..cfg.slice_samples())
        .map(|_| sample_mask_set(&nets.disc, &rates, &mut rng.disc_masks))
        .collect::<Result<Vec<_>>>()?;
    Ok(SlicedDraws {
        z,
        gen_masks,
        projections,
        disc_masks,
    })
}

fn gen_grads_sliced<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<(MlpParams<S>, f64)> {
    let nets = &model.nets;
    let draws = sliced_draws(model, cfg, rng)?;
    let mut mean = GradientMean::new();
    let mut loss = Running::default();
    let mut scratch = Some((model.gen.clone(), model.disc.clone()));
    for (m, disc_masks) in draws.disc_masks.iter().enumerate() {
        let (gp, dp) = scratch.take().unwrap_or_else(|| (model.gen.clone(), model.disc.clone()));
        let run = || -> Result<_> {
            let mut g = Graph::new();
            let gv = gp.bind_owned(&mut g, true)?;
            let dv = dp.bind_owned(&mut g, false)?;
            let zv = g.constant(draws.z.clone())?;
            let xr = g.constant(real.clone())?;
            let fake = forward(&mut g, &nets.gen, &gv, &draws.gen_masks, zv)?.output;
            let fr = disc_forward(&mut g, &nets.disc, &dv, disc_masks, xr)?.features;
            let ff = disc_forward(&mut g, &nets.disc, &dv, disc_masks, fake)?.features;
            let (l, _) = sliced_w_graph(&mut g, fr, ff, &draws.projections)?;
            g.backward(l)?;
            let grads = gv.take_grads(&mut g);
            scratch = Some((gv.reclaim(&mut g), dv.reclaim(&mut g)));
            Ok((grads, g.value(l).item().as_f64()))
        };
        let (grads, l) = run().map_err(|e| at_sample(e, "discriminator", m))?;
        mean.add(grads)?;
        loss.add(l);
    }
    Ok((mean.finish().expect("m_slice >= 1"), loss.mean))
}

fn disc_features<S: Scalar>(model: &GanModel<S>, masks: &DropoutMaskSet, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let dv = model.disc.bind(&mut g, false)?;
    let xv = g.constant(x.clone())?;
    let out = disc_forward(&mut g, &model.nets.disc, &dv, masks, xv)?;
    Ok(g.value(out.features).clone())
}

/// Sliced distance between real and generated discriminator features,
/// averaged over `cfg.slice_samples()` sampled discriminators; each sample
/// scores both sets with the same masks. Consumes the same draws as a
/// sliced generator step.
pub fn prb_sliced_w_distance<S: Scalar>(model: &GanModel<S>, cfg: &GanConfig, real: &Tensor<S>, rng: &mut StepRng) -> Result<f64> {
    check_batch(model, cfg, real)?;
    let draws = sliced_draws(model, cfg, rng)?;
    let fake = generate(&model.gen, &model.nets.gen, &draws.gen_masks, &draws.z)?;
    let mut acc = Running::default();
    for masks in &draws.disc_masks {
        let fr = disc_features(model, masks, real)?;
        let ff = disc_features(model, masks, &fake)?;
        acc.add(sliced_w_distance(&fr, &ff, &draws.projections)?.value);
    }
    Ok(acc.mean)
}
