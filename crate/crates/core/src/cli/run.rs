use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{default_range, first_coordinate, mode_coverage_against, Histogram, ModeCoverageReport, DEFAULT_BINS};
use crate::nn::checkpoint;
use crate::prbgan::{
    disc_step, gen_step, sample_generator, stream, GanConfig, GanModel, StepReport, StepRng, STREAM_DATA, STREAM_EVAL, STREAM_EVAL_MASKS,
};
use crate::synthdata::sample;

use super::config::ExperimentConfig;

/// Held-out real samples behind the reference histogram.
pub const REFERENCE_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub step: usize,
    #[serde(flatten)]
    pub report: StepReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLine {
    /// Completed training steps.
    pub step: usize,
    #[serde(flatten)]
    pub coverage: ModeCoverageReport,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Step(StepLine),
    Eval(EvalLine),
}

/// Training state of one seed.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub gan: GanConfig,
    pub model: GanModel<f64>,
    rng: StepRng,
    data: ChaCha8Rng,
    eval_latent: ChaCha8Rng,
    eval_masks: ChaCha8Rng,
    shift: Vec<f64>,
    scale: Vec<f64>,
    reference: Histogram,
    steps_done: usize,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let gan = GanConfig { seed, ..cfg.gan.clone() };
        let model = GanModel::new(cfg.networks()?, &gan)?;
        let mut eval = stream(seed, STREAM_EVAL);
        let real: Tensor<f64> = sample(&cfg.mixture, REFERENCE_SAMPLES, &mut eval)?;
        let rx = first_coordinate(&real);
        let (lo, hi) = default_range(&rx)?;
        let reference = Histogram::new(&rx, DEFAULT_BINS, lo, hi)?;
        let d = cfg.mixture.dimension();
        let (shift, scale) = if cfg.standardize {
            (cfg.mixture.mean(), cfg.mixture.std())
        } else {
            (vec![0.0; d], vec![1.0; d])
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            gan,
            model,
            rng: StepRng::new(seed),
            data: stream(seed, STREAM_DATA),
            eval_latent: eval,
            eval_masks: stream(seed, STREAM_EVAL_MASKS),
            shift,
            scale,
            reference,
            steps_done: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn reference(&self) -> &Histogram {
        &self.reference
    }

    fn real_batch(&mut self) -> Result<Tensor<f64>> {
        let x: Tensor<f64> = sample(&self.cfg.mixture, self.gan.batch, &mut self.data)?;
        let d = self.shift.len();
        let mut x = x;
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (*v - self.shift[i % d]) / self.scale[i % d];
        }
        Ok(x)
    }

    /// `disc_steps_per_gen_step` discriminator updates, then one generator
    /// update, each on a fresh real batch.
    pub fn step(&mut self) -> Result<StepLine> {
        let mut disc = StepReport::default();
        for _ in 0..self.cfg.schedule.disc_steps_per_gen_step {
            let x = self.real_batch()?;
            disc = disc_step(&mut self.model, &self.gan, &x, &mut self.rng)?;
        }
        let x = self.real_batch()?;
        let gen = gen_step(&mut self.model, &self.gan, &x, &mut self.rng)?;
        let report = StepReport::combine(&disc, &gen);
        let line = StepLine {
            step: self.steps_done,
            report,
        };
        self.steps_done += 1;
        if !report.is_finite() {
            return Err(Error::NonFinite {
                op: format!("training telemetry at step {}", line.step),
            });
        }
        Ok(line)
    }

    /// Generated samples in data units. Every call starts the evaluation
    /// streams from the same state, so successive evaluations see the same
    /// latent codes and masks.
    pub fn samples(&self, n: usize) -> Result<Tensor<f64>> {
        let mut x = sample_generator(&self.model, &self.gan, n, &mut self.eval_latent.clone(), &mut self.eval_masks.clone())?;
        let d = self.shift.len();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = *v * self.scale[i % d] + self.shift[i % d];
        }
        Ok(x)
    }

    pub fn evaluate(&self) -> Result<(EvalLine, Tensor<f64>)> {
        let fake = self.samples(self.cfg.schedule.sample_count_for_eval)?;
        let coverage = mode_coverage_against(&fake, &self.cfg.mixture, self.cfg.tau, &self.reference)?;
        Ok((
            EvalLine {
                step: self.steps_done,
                coverage,
            },
            fake,
        ))
    }

    fn due(&self) -> bool {
        let s = self.steps_done;
        s.is_multiple_of(self.cfg.schedule.eval_every) || s == self.cfg.schedule.total_steps
    }
}

/// Outcome of one seed; `error` is set when training stopped early.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<Metric>,
    pub final_eval: Option<EvalLine>,
    pub error: Option<String>,
    pub numeric_failure: bool,
}

impl SeedRun {
    pub fn evals(&self) -> impl Iterator<Item = &EvalLine> {
        self.metrics.iter().filter_map(|m| match m {
            Metric::Eval(e) => Some(e),
            Metric::Step(_) => None,
        })
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NumericGuard { .. } | Error::Domain { .. })
}

/// Trains one seed, writing its outputs under `dir` when given. A numeric
/// failure keeps the metrics written so far and the last evaluation.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let mut t = Trainer::new(cfg, seed)?;
    let mut sink = match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Some(BufWriter::new(File::create(d.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let mut run = SeedRun {
        seed,
        metrics: Vec::new(),
        final_eval: None,
        error: None,
        numeric_failure: false,
    };
    let mut last_fake = None;
    let mut emit = |run: &mut SeedRun, m: Metric| -> Result<()> {
        if let Some(w) = sink.as_mut() {
            serde_json::to_writer(&mut *w, &m).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        run.metrics.push(m);
        Ok(())
    };
    let outcome = (|| -> Result<()> {
        loop {
            if t.due() {
                let (e, fake) = t.evaluate()?;
                run.final_eval = Some(e.clone());
                last_fake = Some(fake);
                emit(&mut run, Metric::Eval(e))?;
            }
            if t.steps_done() == cfg.schedule.total_steps {
                return Ok(());
            }
            let line = t.step()?;
            emit(&mut run, Metric::Step(line))?;
        }
    })();
    if let Some(mut w) = sink {
        w.flush()?;
    }
    match outcome {
        Ok(()) => {}
        Err(e) if is_numeric(&e) => {
            run.error = Some(e.to_string());
            run.numeric_failure = true;
        }
        Err(e) => return Err(e),
    }
    if let (Some(d), Some(fake)) = (dir, last_fake.as_ref()) {
        write_seed_outputs(&t, fake, run.final_eval.as_ref().expect("set with samples"), d)?;
    }
    Ok(run)
}

fn write_seed_outputs(t: &Trainer, fake: &Tensor<f64>, eval: &EvalLine, dir: &Path) -> Result<()> {
    let reference = t.reference();
    let fake_hist = Histogram::with_edges(&first_coordinate(fake), reference.edges().to_vec())?;
    reference.write_csv(BufWriter::new(File::create(dir.join("hist_real.csv"))?))?;
    fake_hist.write_csv(BufWriter::new(File::create(dir.join("hist_fake.csv"))?))?;
    fs::write(dir.join("coverage.txt"), eval.coverage.to_text())?;
    let json = serde_json::to_string_pretty(eval).map_err(std::io::Error::from)?;
    fs::write(dir.join("coverage.json"), json + "\n")?;
    write_samples(fake, BufWriter::new(File::create(dir.join("samples.csv"))?))?;
    checkpoint::save(&t.model.gen, &dir.join("generator.ckpt"))?;
    checkpoint::save(&t.model.disc, &dir.join("discriminator.ckpt"))?;
    Ok(())
}

/// Samples as CSV with header `x0,x1,...`.
pub fn write_samples<W: Write>(x: &Tensor<f64>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    out.write_record(&header).map_err(csv_io)?;
    for r in 0..x.rows() {
        out.write_record(x.row(r).iter().map(|v| format!("{v:?}"))).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn read_samples<R: Read>(r: R) -> Result<Tensor<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let cols = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} fields, found {}", rec.len()),
            });
        }
        for f in rec.iter() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{f}` is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { line: 1, message: "no samples".into() });
    }
    Tensor::new(vec![rows, cols], data)
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<Metric>> {
    BufReader::new(r)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Median and interquartile range (linear interpolation between order
/// statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub iqr: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Spread {
        median: quantile(&v, 0.5),
        iqr: quantile(&v, 0.75) - quantile(&v, 0.25),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub initial: Option<EvalLine>,
    #[serde(rename = "final")]
    pub last: Option<EvalLine>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub total_steps: usize,
    pub seeds: Vec<SeedSummary>,
    pub modes_captured: Option<Spread>,
    pub high_quality_fraction: Option<Spread>,
    pub jsd: Option<Spread>,
    pub initial_jsd: Option<Spread>,
}

impl RunSummary {
    pub fn new(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Self {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                initial: r.evals().next().cloned(),
                last: r.final_eval.clone(),
                error: r.error.clone(),
            })
            .collect();
        let finals: Vec<&ModeCoverageReport> = seeds.iter().filter_map(|s| s.last.as_ref().map(|e| &e.coverage)).collect();
        let of = |f: &dyn Fn(&ModeCoverageReport) -> f64| spread(&finals.iter().map(|c| f(c)).collect::<Vec<_>>());
        let initial: Vec<f64> = seeds.iter().filter_map(|s| s.initial.as_ref().map(|e| e.coverage.jsd)).collect();
        RunSummary {
            variant: cfg.gan.variant.to_string(),
            total_steps: cfg.schedule.total_steps,
            modes_captured: of(&|c| c.modes_captured as f64),
            high_quality_fraction: of(&|c| c.high_quality_fraction),
            jsd: of(&|c| c.jsd),
            initial_jsd: spread(&initial),
            seeds,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("variant: {}\ntotal_steps: {}\n", self.variant, self.total_steps);
        for (name, s) in [
            ("modes_captured", self.modes_captured),
            ("high_quality_fraction", self.high_quality_fraction),
            ("jsd", self.jsd),
            ("initial_jsd", self.initial_jsd),
        ] {
            match s {
                Some(s) => out += &format!("{name}: median {} iqr {}\n", s.median, s.iqr),
                None => out += &format!("{name}: n/a\n"),
            }
        }
        for s in &self.seeds {
            match (&s.last, &s.error) {
                (_, Some(e)) => out += &format!("seed {}: failed at a numeric guard: {e}\n", s.seed),
                (Some(l), None) => {
                    out += &format!("seed {}: modes {} jsd {}\n", s.seed, l.coverage.modes_captured, l.coverage.jsd)
                }
                (None, None) => out += &format!("seed {}: no evaluation\n", s.seed),
            }
        }
        out
    }
}

/// Worker threads: `PRBGAN_THREADS` when set, else the available
/// parallelism, never more than there are seeds.
pub fn worker_count(seeds: usize) -> usize {
    let avail = std::env::var("PRBGAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    avail.min(seeds).max(1)
}

/// Trains every seed, optionally writing outputs under `cfg.out_dir`. Runs
/// are returned in seed-list order and do not depend on the thread count.
pub fn run_seeds(cfg: &ExperimentConfig, write: bool) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    if write {
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..worker_count(cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let dir = write.then(|| seed_dir(&cfg.out_dir, seed));
                let r = train_seed(cfg, seed, dir.as_deref());
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Trains, writes per-seed outputs and the summary, and returns the summary.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let runs = run_seeds(cfg, true)?;
    let summary = RunSummary::new(cfg, &runs);
    let json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?;
    fs::write(cfg.out_dir.join("summary.json"), json + "\n")?;
    fs::write(cfg.out_dir.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}
