//! Finite-difference verification of every training objective.
//!
//! Random small generator/discriminator pairs are built, each objective is
//! evaluated in one graph with both networks trainable, and every parameter
//! element's analytic gradient is compared with a central difference. An
//! element is skipped when either perturbed evaluation lands on a different
//! side of a kink (leaky-relu sign or sort order) than the base point.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::nn::{forward, sample_mask_set, xavier_init_with, Activation, Architecture, DropoutMaskSet, DropoutRates, LayerSpec, MlpParams, MlpVars, ParamSet};
use crate::prbgan::{
    disc_forward, disc_loss_ls, disc_loss_ns, disc_loss_v1, gen_loss_ls, gen_loss_ns, gen_loss_v1, gen_loss_v2, random_projections, sliced_w_graph, DiscParams,
    DiscVars, GanConfig, Variant,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Random network pairs to build.
    pub networks: usize,
    pub max_width: usize,
    pub batch: usize,
    /// Sampled networks per MC-averaged objective.
    pub n_mc: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            networks: 20,
            max_width: 32,
            batch: 5,
            n_mc: 3,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Worst agreement seen for one objective over all networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<LossCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && self.checks.iter().all(|c| c.checked > 0)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for a loss of magnitude `f`. Central differences carry
/// roundoff near `|f| * eps / h`, about `|f| * 1e-11` at `h = 1e-5`, so
/// gradients below `|f| * 1e-6` are judged on that absolute scale instead.
pub fn loss_floor(f: f64) -> f64 {
    (f.abs() * 1e-6).max(1e-8)
}

#[derive(Clone, Copy, Debug, Default)]
struct Agreement {
    checked: usize,
    skipped: usize,
    max_rel_err: f64,
}

/// Compares backprop with central differences for every element of
/// `params`. `build` gets one trainable leaf per tensor, in order.
fn check_all<F>(params: &[Tensor<f64>], h: f64, build: F) -> Result<Agreement>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = ps.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let root = build(&mut g, &vars)?;
        Ok((g, vars, root))
    };
    let (mut g, vars, root) = eval(params)?;
    g.backward(root)?;
    let base = g.branch_signature();
    let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut out = Agreement::default();
    let mut work = params.to_vec();
    for t in 0..params.len() {
        for i in 0..params[t].numel() {
            let x = params[t].data()[i];
            let mut side = |delta: f64| -> Result<Option<f64>> {
                work[t].data_mut()[i] = x + delta;
                let (g, _, root) = eval(&work)?;
                Ok((g.branch_signature() == base).then(|| g.value(root).item()))
            };
            let plus = side(h)?;
            let minus = side(-h)?;
            work[t].data_mut()[i] = x;
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    let numeric = (p - m) / (2.0 * h);
                    let e = relative_error(grads[t].data()[i], numeric, loss_floor(p));
                    out.max_rel_err = out.max_rel_err.max(e);
                    out.checked += 1;
                }
                _ => out.skipped += 1,
            }
        }
    }
    Ok(out)
}

/// Network pair with an uncertainty head, plus fixed inputs and masks.
struct Fixture {
    gen_arch: Architecture,
    disc_arch: Architecture,
    gen: MlpParams<f64>,
    disc: DiscParams<f64>,
    real: Tensor<f64>,
    z: Tensor<f64>,
    gen_masks: Vec<DropoutMaskSet>,
    disc_masks: Vec<DropoutMaskSet>,
    projections: Tensor<f64>,
}

fn random_arch(input: usize, output: usize, rng: &mut ChaCha8Rng, max_width: usize) -> Result<Architecture> {
    let hidden: Vec<usize> = (0..3).map(|_| rng.random_range(2..=max_width)).collect();
    Architecture::mlp(input, &hidden, output, Activation::LeakyRelu(0.2))
}

fn fixture(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Fixture> {
    let latent = rng.random_range(1..=3);
    let dim = rng.random_range(1..=3);
    let gen_arch = random_arch(latent, dim, rng, cfg.max_width)?;
    let disc_arch = random_arch(dim, 1, rng, cfg.max_width)?;
    let gen = perturb_biases(xavier_init_with(&gen_arch, rng), rng);
    let body = perturb_biases(xavier_init_with(&disc_arch, rng), rng);
    let head_spec = LayerSpec::new(disc_arch.penultimate_dim(), 1, Activation::Linear, false)?;
    let head = xavier_init_with::<f64, _>(&Architecture::new(vec![head_spec])?, rng).layers.pop();
    let gauss = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5));
    let real = gauss(cfg.batch, dim, rng);
    let z = gauss(cfg.batch, latent, rng);
    let rates = DropoutRates::uniform(0.4);
    let gen_masks = (0..cfg.n_mc).map(|_| sample_mask_set(&gen_arch, &rates, rng)).collect::<Result<_>>()?;
    let disc_masks = (0..cfg.n_mc).map(|_| sample_mask_set(&disc_arch, &rates, rng)).collect::<Result<_>>()?;
    let projections = random_projections(disc_arch.penultimate_dim(), rng.random_range(1..=6), rng)?;
    Ok(Fixture {
        gen_arch,
        disc_arch,
        gen,
        disc: DiscParams { body, head },
        real,
        z,
        gen_masks,
        disc_masks,
        projections,
    })
}

/// Zero biases make many leaky-relu inputs sit exactly on the kink.
fn perturb_biases(mut p: MlpParams<f64>, rng: &mut ChaCha8Rng) -> MlpParams<f64> {
    for l in &mut p.layers {
        for b in l.bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    p
}

/// Rebuilds handles from the flat list: generator tensors, then
/// discriminator body, then head.
fn split_vars(vars: &[Var], gen_layers: usize, disc_layers: usize) -> (MlpVars, DiscVars) {
    let pairs = |vs: &[Var]| vs.chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>();
    let g_end = 2 * gen_layers;
    let d_end = g_end + 2 * disc_layers;
    let gen = MlpVars { layers: pairs(&vars[..g_end]) };
    let body = MlpVars {
        layers: pairs(&vars[g_end..d_end]),
    };
    let head = (vars.len() > d_end).then(|| (vars[d_end], vars[d_end + 1]));
    (gen, DiscVars { body, head })
}

type Objective = fn(&Fixture, &mut Graph<f64>, &MlpVars, &DiscVars) -> Result<Var>;

fn generated(f: &Fixture, g: &mut Graph<f64>, gv: &MlpVars, masks: &DropoutMaskSet) -> Result<Var> {
    let z = g.constant(f.z.clone())?;
    Ok(forward(g, &f.gen_arch, gv, masks, z)?.output)
}

fn mean_of(g: &mut Graph<f64>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

fn gan_config(f: &Fixture, variant: Variant) -> GanConfig {
    GanConfig {
        variant,
        n_mc: f.disc_masks.len(),
        lambda_var: 0.7,
        ..GanConfig::default()
    }
}

fn objectives() -> Vec<(&'static str, Objective)> {
    vec![
        ("vanilla_ns", |f, g, gv, dv| {
            let ones_g = DropoutMaskSet::all_ones(&f.gen_arch);
            let ones_d = DropoutMaskSet::all_ones(&f.disc_arch);
            let fake = generated(f, g, gv, &ones_g)?;
            let real = g.constant(f.real.clone())?;
            let or = disc_forward(g, &f.disc_arch, dv, &ones_d, real)?;
            let of = disc_forward(g, &f.disc_arch, dv, &ones_d, fake)?;
            let d = disc_loss_ns(g, &or, &of)?;
            let gl = gen_loss_ns(g, &of)?;
            g.add(d, gl)
        }),
        ("vanilla_ls", |f, g, gv, dv| {
            let ones_g = DropoutMaskSet::all_ones(&f.gen_arch);
            let ones_d = DropoutMaskSet::all_ones(&f.disc_arch);
            let fake = generated(f, g, gv, &ones_g)?;
            let real = g.constant(f.real.clone())?;
            let or = disc_forward(g, &f.disc_arch, dv, &ones_d, real)?;
            let of = disc_forward(g, &f.disc_arch, dv, &ones_d, fake)?;
            let d = disc_loss_ls(g, &or, &of)?;
            let gl = gen_loss_ls(g, &of)?;
            g.add(d, gl)
        }),
        ("prb", |f, g, gv, dv| {
            // Discriminator objective: one generator, N discriminators.
            let fake = generated(f, g, gv, &f.gen_masks[0])?;
            let real = g.constant(f.real.clone())?;
            let mut terms = Vec::new();
            for m in &f.disc_masks {
                let or = disc_forward(g, &f.disc_arch, dv, m, real)?;
                let of = disc_forward(g, &f.disc_arch, dv, m, fake)?;
                terms.push(disc_loss_ns(g, &or, &of)?);
            }
            // Generator objective: one discriminator, N generators.
            for m in &f.gen_masks {
                let fake = generated(f, g, gv, m)?;
                let of = disc_forward(g, &f.disc_arch, dv, &f.disc_masks[0], fake)?;
                terms.push(gen_loss_ns(g, &of)?);
            }
            mean_of(g, &terms)
        }),
        ("prb_v1", |f, g, gv, dv| {
            let cfg = gan_config(f, Variant::PrbV1);
            let fake = generated(f, g, gv, &f.gen_masks[0])?;
            let real = g.constant(f.real.clone())?;
            let mut reals = Vec::new();
            let mut fakes = Vec::new();
            for m in &f.disc_masks {
                reals.push(disc_forward(g, &f.disc_arch, dv, m, real)?);
                fakes.push(disc_forward(g, &f.disc_arch, dv, m, fake)?);
            }
            let d = disc_loss_v1(g, &reals, &fakes, &cfg)?;
            let gl = gen_loss_v1(g, &fakes[0], cfg.b1)?;
            g.add(d, gl)
        }),
        ("prb_v2", |f, g, gv, dv| {
            let cfg = gan_config(f, Variant::PrbV2);
            let fake = generated(f, g, gv, &f.gen_masks[0])?;
            let fakes = f
                .disc_masks
                .iter()
                .map(|m| disc_forward(g, &f.disc_arch, dv, m, fake))
                .collect::<Result<Vec<_>>>()?;
            gen_loss_v2(g, &fakes, &cfg)
        }),
        ("sliced_w", |f, g, gv, dv| {
            let fake = generated(f, g, gv, &f.gen_masks[0])?;
            let real = g.constant(f.real.clone())?;
            let mut terms = Vec::new();
            for m in &f.disc_masks {
                let fr = disc_forward(g, &f.disc_arch, dv, m, real)?.features;
                let ff = disc_forward(g, &f.disc_arch, dv, m, fake)?.features;
                terms.push(sliced_w_graph(g, fr, ff, &f.projections)?.0);
            }
            mean_of(g, &terms)
        }),
    ]
}

/// Runs every objective on `cfg.networks` random network pairs.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objectives = objectives();
    let mut totals: Vec<Agreement> = vec![Agreement::default(); objectives.len()];
    for _ in 0..cfg.networks {
        let f = fixture(cfg, &mut rng)?;
        let mut params: Vec<Tensor<f64>> = f.gen.tensors().into_iter().cloned().collect();
        params.extend(f.disc.tensors().into_iter().cloned());
        let (gl, dl) = (f.gen.layers.len(), f.disc.body.layers.len());
        for ((_, objective), total) in objectives.iter().zip(&mut totals) {
            let a = check_all(&params, cfg.step, |g, vars| {
                let (gv, dv) = split_vars(vars, gl, dl);
                objective(&f, g, &gv, &dv)
            })?;
            total.checked += a.checked;
            total.skipped += a.skipped;
            total.max_rel_err = total.max_rel_err.max(a.max_rel_err);
        }
    }
    let checks: Vec<LossCheck> = objectives
        .iter()
        .zip(&totals)
        .map(|((name, _), a)| LossCheck {
            loss: name.to_string(),
            checked: a.checked,
            skipped: a.skipped,
            max_rel_err: a.max_rel_err,
        })
        .collect();
    Ok(GradcheckReport {
        max_rel_err: checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max),
        checks,
        tolerance: cfg.tolerance,
        elapsed: start.elapsed(),
    })
}
