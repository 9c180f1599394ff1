use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_TAU;
use crate::nn::{OptimizerConfig, OptimizerKind};
use crate::prbgan::{GanConfig, Networks, Variant};
use crate::synthdata::{paper_mixture, Component, LatentPrior, MixtureSpec};

/// Fully connected layout shared by both players.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Fully connected layers per network, output layer included.
    pub layers: usize,
    pub width: usize,
    pub slope: f64,
}

impl NetworkConfig {
    pub fn build(&self, latent_dim: usize, data_dim: usize) -> Result<Networks> {
        Networks::mlp(latent_dim, data_dim, self.layers, self.width, self.slope)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Training steps; each is `disc_steps_per_gen_step` discriminator
    /// updates followed by one generator update.
    pub total_steps: usize,
    pub disc_steps_per_gen_step: usize,
    /// Evaluation cadence in steps; step 0 and the last step are always
    /// evaluated.
    pub eval_every: usize,
    pub sample_count_for_eval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gan: GanConfig,
    pub network: NetworkConfig,
    pub mixture: MixtureSpec,
    pub schedule: Schedule,
    /// Train on `(x - mean) / std` of the mixture; generated samples are
    /// mapped back before evaluation.
    pub standardize: bool,
    pub tau: f64,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        let s = &self.schedule;
        if s.total_steps < 1 {
            return Err(Error::config("total_steps must be >= 1"));
        }
        if s.disc_steps_per_gen_step < 1 {
            return Err(Error::config("disc_steps_per_gen_step must be >= 1"));
        }
        if s.eval_every < 1 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        if s.sample_count_for_eval < 1 {
            return Err(Error::config("sample_count_for_eval must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        self.network.build(self.gan.latent_dim, self.mixture.dimension())?;
        Ok(())
    }

    pub fn networks(&self) -> Result<Networks> {
        self.network.build(self.gan.latent_dim, self.mixture.dimension())
    }

    /// Parses the `key = value` format; see [`ExperimentConfig::to_text`].
    /// Keys left out keep the [`preset_paper_1d`] value.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = Entries::read(text)?;
        let mut cfg = preset_paper_1d();
        entries.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Text form accepted by [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let g = &self.gan;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        out += "[gan]\n";
        out += &format!("variant = {}\n", g.variant);
        out += &format!("p = {}\n", g.p);
        for (layer, p) in &g.p_overrides {
            out += &format!("p.{layer} = {p}\n");
        }
        out += &format!("n_mc = {}\nbatch = {}\nlatent_dim = {}\n", g.n_mc, g.batch, g.latent_dim);
        let prior = match g.latent_prior {
            LatentPrior::Uniform => "uniform",
            LatentPrior::Gaussian => "gaussian",
        };
        out += &format!("latent_prior = {prior}\n");
        out += &format!("b1 = {}\nb2 = {}\nlambda_var = {}\n", g.b1, g.b2, g.lambda_var);
        out += &format!("n_projections = {}\nm_slice = {}\n", g.n_projections, g.m_slice);
        out += "\n[optimizer]\n";
        match g.optimizer.kind {
            OptimizerKind::Sgd => out += "kind = sgd\n",
            OptimizerKind::Adam { beta1, beta2, eps } => {
                out += &format!("kind = adam\nbeta1 = {beta1}\nbeta2 = {beta2}\neps = {eps}\n");
            }
        }
        out += &format!("learning_rate = {}\nweight_decay = {}\n", g.optimizer.learning_rate, g.optimizer.weight_decay);
        let n = &self.network;
        out += &format!("\n[network]\nlayers = {}\nwidth = {}\nslope = {}\n", n.layers, n.width, n.slope);
        let comps = self.mixture.components();
        out += "\n[mixture]\n";
        out += &format!("dimension = {}\n", self.mixture.dimension());
        out += &format!("means = {}\n", list(&comps.iter().flat_map(|c| c.mean.clone()).collect::<Vec<_>>()));
        out += &format!("stds = {}\n", list(&comps.iter().flat_map(|c| c.std.clone()).collect::<Vec<_>>()));
        out += &format!("weights = {}\n", list(&comps.iter().map(|c| c.weight).collect::<Vec<_>>()));
        let s = &self.schedule;
        out += &format!(
            "\n[schedule]\ntotal_steps = {}\ndisc_steps_per_gen_step = {}\neval_every = {}\nsample_count_for_eval = {}\n",
            s.total_steps, s.disc_steps_per_gen_step, s.eval_every, s.sample_count_for_eval
        );
        let seeds = self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        out += &format!(
            "\n[run]\nseeds = {seeds}\nout = {}\nstandardize = {}\ntau = {}\n",
            self.out_dir.display(),
            self.standardize,
            self.tau
        );
        out
    }
}

/// The 1-D mixture experiment: 4 fully connected layers of 600 leaky-relu
/// units, a 1-D latent code, p = 0.4, N = 20, batch 64.
pub fn preset_paper_1d() -> ExperimentConfig {
    ExperimentConfig {
        gan: GanConfig {
            variant: Variant::Prb,
            p: 0.4,
            n_mc: 20,
            batch: 64,
            latent_dim: 1,
            // Optimizer settings are not given by the source: adam at 2e-4
            // with the customary GAN momentum of 0.5.
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam {
                    beta1: 0.5,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                learning_rate: 2e-4,
                weight_decay: 1e-4,
            },
            ..GanConfig::default()
        },
        network: NetworkConfig {
            layers: 4,
            width: 600,
            slope: 0.2,
        },
        mixture: paper_mixture(),
        schedule: Schedule {
            total_steps: 2000,
            disc_steps_per_gen_step: 1,
            eval_every: 100,
            sample_count_for_eval: 10_000,
        },
        standardize: true,
        tau: DEFAULT_TAU,
        out_dir: PathBuf::from("runs/paper_1d"),
        seeds: vec![0, 1, 2, 3, 4],
    }
}

/// `section.key -> (value, line)` in file order.
struct Entries {
    map: BTreeMap<String, (String, usize)>,
    order: Vec<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

const KNOWN: &[&str] = &[
    "gan.variant",
    "gan.p",
    "gan.n_mc",
    "gan.batch",
    "gan.latent_dim",
    "gan.latent_prior",
    "gan.b1",
    "gan.b2",
    "gan.lambda_var",
    "gan.n_projections",
    "gan.m_slice",
    "optimizer.kind",
    "optimizer.learning_rate",
    "optimizer.weight_decay",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "network.layers",
    "network.width",
    "network.slope",
    "mixture.preset",
    "mixture.dimension",
    "mixture.means",
    "mixture.stds",
    "mixture.weights",
    "schedule.total_steps",
    "schedule.disc_steps_per_gen_step",
    "schedule.eval_every",
    "schedule.sample_count_for_eval",
    "schedule.epochs",
    "schedule.dataset_size",
    "run.seeds",
    "run.out",
    "run.standardize",
    "run.tau",
];

impl Entries {
    fn read(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, format!("unterminated section header `{content}`")))?;
                section = name.trim().to_string();
                if !["gan", "optimizer", "network", "mixture", "schedule", "run"].contains(&section.as_str()) {
                    return Err(parse_err(line, format!("unknown section [{section}]")));
                }
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if section.is_empty() {
                return Err(parse_err(line, format!("key `{k}` outside any section")));
            }
            let full = format!("{section}.{k}");
            let layer_rate = section == "gan" && k.strip_prefix("p.").is_some_and(|l| l.parse::<usize>().is_ok());
            if !KNOWN.contains(&full.as_str()) && !layer_rate {
                return Err(parse_err(line, format!("unknown key `{k}` in [{section}]")));
            }
            if v.is_empty() {
                return Err(parse_err(line, format!("`{k}` has no value")));
            }
            if map.insert(full.clone(), (v.to_string(), line)).is_some() {
                return Err(parse_err(line, format!("`{k}` set twice in [{section}]")));
            }
            order.push(full);
        }
        Ok(Entries { map, order })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| parse_err(*line, format!("bad value `{v}` for {key}: {e}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse::<T>().map_err(|e| parse_err(*line, format!("bad list item `{s}` in {key}: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |(_, l)| *l)
    }

    /// Applies every entry and validates. A configuration error is pinned
    /// to the first key that fails on its own against the preset.
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        match self.apply_unchecked(cfg).and_then(|()| cfg.validate()) {
            Err(Error::Config(message)) => {
                let culprit = self.order.iter().find(|key| {
                    let single = Entries {
                        map: BTreeMap::from([((*key).clone(), self.map[*key].clone())]),
                        order: vec![(*key).clone()],
                    };
                    let mut probe = preset_paper_1d();
                    single.apply_unchecked(&mut probe).and_then(|()| probe.validate()).is_err()
                });
                Err(match culprit {
                    Some(key) => parse_err(self.line(key), message),
                    None => Error::Config(message),
                })
            }
            other => other,
        }
    }

    fn apply_unchecked(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = self.get($key)? {
                    $field = v;
                }
            };
        }
        let g = &mut cfg.gan;
        set!("gan.variant", g.variant);
        set!("gan.p", g.p);
        set!("gan.n_mc", g.n_mc);
        set!("gan.batch", g.batch);
        set!("gan.latent_dim", g.latent_dim);
        set!("gan.b1", g.b1);
        set!("gan.b2", g.b2);
        set!("gan.lambda_var", g.lambda_var);
        set!("gan.n_projections", g.n_projections);
        set!("gan.m_slice", g.m_slice);
        if let Some(prior) = self.get::<String>("gan.latent_prior")? {
            g.latent_prior = match prior.as_str() {
                "uniform" => LatentPrior::Uniform,
                "gaussian" => LatentPrior::Gaussian,
                other => return Err(parse_err(self.line("gan.latent_prior"), format!("unknown latent prior `{other}`"))),
            };
        }
        for key in &self.order {
            if let Some(layer) = key.strip_prefix("gan.p.") {
                let layer: usize = layer.parse().expect("checked when read");
                let p = self.get::<f64>(key)?.expect("present");
                g.p_overrides.push((layer, p));
            }
        }

        let o = &mut g.optimizer;
        set!("optimizer.learning_rate", o.learning_rate);
        set!("optimizer.weight_decay", o.weight_decay);
        let kind = self.get::<String>("optimizer.kind")?;
        let (mut b1, mut b2, mut eps) = match o.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
        };
        set!("optimizer.beta1", b1);
        set!("optimizer.beta2", b2);
        set!("optimizer.eps", eps);
        o.kind = match kind.as_deref() {
            None | Some("adam") => OptimizerKind::Adam {
                beta1: b1,
                beta2: b2,
                eps,
            },
            Some("sgd") => OptimizerKind::Sgd,
            Some(other) => return Err(parse_err(self.line("optimizer.kind"), format!("unknown optimizer `{other}`"))),
        };
        if matches!(o.kind, OptimizerKind::Sgd) {
            for k in ["optimizer.beta1", "optimizer.beta2", "optimizer.eps"] {
                if self.map.contains_key(k) {
                    return Err(parse_err(self.line(k), "adam parameter given for the sgd optimizer"));
                }
            }
        }

        let n = &mut cfg.network;
        set!("network.layers", n.layers);
        set!("network.width", n.width);
        set!("network.slope", n.slope);

        self.apply_mixture(cfg)?;

        let s = &mut cfg.schedule;
        set!("schedule.total_steps", s.total_steps);
        set!("schedule.disc_steps_per_gen_step", s.disc_steps_per_gen_step);
        set!("schedule.eval_every", s.eval_every);
        set!("schedule.sample_count_for_eval", s.sample_count_for_eval);
        match (self.get::<usize>("schedule.epochs")?, self.get::<usize>("schedule.dataset_size")?) {
            (Some(epochs), Some(size)) => {
                if self.map.contains_key("schedule.total_steps") {
                    return Err(parse_err(self.line("schedule.epochs"), "give either epochs or total_steps, not both"));
                }
                // One step consumes one batch per discriminator update.
                let per_step = cfg.gan.batch * s.disc_steps_per_gen_step;
                s.total_steps = (epochs * size).div_ceil(per_step);
            }
            (None, None) => {}
            _ => {
                let key = if self.map.contains_key("schedule.epochs") { "schedule.epochs" } else { "schedule.dataset_size" };
                return Err(parse_err(self.line(key), "epochs and dataset_size must be given together"));
            }
        }
        if s.total_steps == 0 {
            let key = if self.map.contains_key("schedule.total_steps") { "schedule.total_steps" } else { "schedule.epochs" };
            return Err(parse_err(self.line(key), "total_steps must be >= 1"));
        }

        if let Some(seeds) = self.list::<u64>("run.seeds")? {
            cfg.seeds = seeds;
        }
        if let Some(out) = self.get::<String>("run.out")? {
            cfg.out_dir = PathBuf::from(out);
        }
        set!("run.standardize", cfg.standardize);
        set!("run.tau", cfg.tau);

        Ok(())
    }

    fn apply_mixture(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(name) = self.get::<String>("mixture.preset")? {
            cfg.mixture = match name.as_str() {
                "paper" => paper_mixture(),
                "grid" => crate::synthdata::grid_mixture_2d(),
                other => return Err(parse_err(self.line("mixture.preset"), format!("unknown mixture preset `{other}`"))),
            };
        }
        let means = self.list::<f64>("mixture.means")?;
        let stds = self.list::<f64>("mixture.stds")?;
        let (means, stds) = match (means, stds) {
            (None, None) => {
                for k in ["mixture.weights", "mixture.dimension"] {
                    if self.map.contains_key(k) {
                        return Err(parse_err(self.line(k), "mixture needs means and stds"));
                    }
                }
                return Ok(());
            }
            (Some(m), Some(s)) => (m, s),
            (Some(_), None) => return Err(parse_err(self.line("mixture.means"), "means given without stds")),
            (None, Some(_)) => return Err(parse_err(self.line("mixture.stds"), "stds given without means")),
        };
        let d = self.get::<usize>("mixture.dimension")?.unwrap_or(1);
        let line = self.line("mixture.means");
        if d == 0 || means.len() % d != 0 {
            return Err(parse_err(line, format!("{} means do not split into {d}-dimensional components", means.len())));
        }
        if stds.len() != means.len() {
            return Err(parse_err(self.line("mixture.stds"), format!("{} stds for {} means", stds.len(), means.len())));
        }
        let k = means.len() / d;
        let weights = match self.list::<f64>("mixture.weights")? {
            Some(w) if w.len() != k => {
                return Err(parse_err(self.line("mixture.weights"), format!("{} weights for {k} components", w.len())))
            }
            Some(w) => w,
            None => vec![1.0; k],
        };
        let components = (0..k)
            .map(|c| Component {
                mean: means[c * d..(c + 1) * d].to_vec(),
                std: stds[c * d..(c + 1) * d].to_vec(),
                weight: weights[c],
            })
            .collect();
        cfg.mixture = MixtureSpec::new(components)?;
        Ok(())
    }
}
