//! Experiment configuration, the multi-seed training harness and the
//! command-line front end.
//!
//! A run writes, under its output directory, `config.txt`, one `seed_<s>/`
//! directory per seed and `summary.json`/`summary.txt`. Each seed directory
//! holds `metrics.jsonl`, `hist_real.csv`, `hist_fake.csv`, `coverage.txt`,
//! `coverage.json`, `samples.csv`, `generator.ckpt` and
//! `discriminator.ckpt`; every file reads back through this crate.

mod config;
mod run;

use std::ffi::OsString;
use std::fs::File;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::eval::mode_coverage;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::prbgan::Variant;

pub use config::{preset_paper_1d, ExperimentConfig, NetworkConfig, Schedule};
pub use run::{
    quantile, read_metrics, read_samples, run, run_seeds, seed_dir, spread, train_seed, worker_count, write_samples, EvalLine, Metric,
    RunSummary, SeedRun, SeedSummary, Spread, StepLine, Trainer, REFERENCE_SAMPLES,
};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::NumericGuard { .. } | Error::Domain { .. } => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "prbgan", about = "MC-dropout GANs on synthetic mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured seed and write metrics, histograms and checkpoints.
    Train {
        /// Experiment file; the 1-D mixture preset when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score a samples CSV against the mixture of an experiment file.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        /// Experiment file supplying the mixture and tau; the preset when absent.
        #[arg(long)]
        mixture: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of every objective.
    Gradcheck {
        #[arg(long, default_value_t = GradcheckConfig::default().networks)]
        networks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the preset experiment file.
    Preset,
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(preset_paper_1d()),
    }
}

/// Runs a command, printing results to stdout, and returns the exit code.
pub fn execute(cmd: Command) -> Result<i32, Error> {
    match cmd {
        Command::Train {
            config,
            seed,
            variant,
            out,
            steps,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(v) = variant {
                cfg.gan.variant = v;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(n) = steps {
                cfg.schedule.total_steps = n;
            }
            cfg.validate()?;
            let summary = run(&cfg)?;
            print!("{}", summary.to_text());
            let failed = summary.seeds.iter().any(|s| s.error.is_some());
            Ok(if failed { EXIT_NUMERIC } else { 0 })
        }
        Command::Eval { samples, mixture } => {
            let cfg = load(mixture.as_ref())?;
            let x = read_samples(File::open(&samples)?)?;
            let report = mode_coverage(&x, &cfg.mixture, cfg.tau)?;
            print!("{}", report.to_text());
            Ok(0)
        }
        Command::Gradcheck { networks, seed } => {
            let report = run_gradcheck(&GradcheckConfig {
                networks,
                seed,
                ..GradcheckConfig::default()
            })?;
            for c in &report.checks {
                println!("{}: {} checked, {} skipped, max rel err {:e}", c.loss, c.checked, c.skipped, c.max_rel_err);
            }
            let verdict = if report.passed() { "pass" } else { "fail" };
            println!("max rel err {:e} (tolerance {:e}) in {:.1?}: {verdict}", report.max_rel_err, report.tolerance, report.elapsed);
            Ok(if report.passed() { 0 } else { EXIT_FAILURE })
        }
        Command::Preset => {
            print!("{}", preset_paper_1d().to_text());
            Ok(0)
        }
    }
}

/// Parses `args` and runs the command; errors go to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
