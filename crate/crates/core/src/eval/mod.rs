//! Evaluation of generated samples: histograms, per-mode capture counts and
//! the Jensen-Shannon divergence between binned distributions.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthdata::MixtureSpec;

#[cfg(test)]
mod tests;

pub const DEFAULT_TAU: f64 = 0.02;
pub const DEFAULT_BINS: usize = 100;
/// Padding added on both sides of the real data range by [`default_range`].
pub const RANGE_PADDING: f64 = 5.0;
/// Capture radius in component standard deviations.
pub const CAPTURE_SIGMAS: f64 = 3.0;

/// Equal-width histogram. Bins are half-open `[lo, hi)` except the last,
/// which also holds its upper edge. Samples outside the edges are counted in
/// `total` but in no bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("histogram of an empty sample set"));
        }
        if bins == 0 {
            return Err(Error::contract("histogram needs at least one bin"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::contract(format!("histogram range [{lo}, {hi}] is empty or not finite")));
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        Histogram::with_edges(samples, edges)
    }

    /// Bins `samples` on arbitrary strictly increasing `edges`.
    pub fn with_edges(samples: &[f64], edges: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("histogram of an empty sample set"));
        }
        let mut counts = vec![0u64; edges.len().saturating_sub(1)];
        let probe = Histogram::from_parts(edges, counts.clone(), 0)?;
        for &x in samples {
            if let Some(b) = bin_of(&probe.edges, x) {
                counts[b] += 1;
            }
        }
        Ok(Histogram {
            edges: probe.edges,
            counts,
            total: samples.len() as u64,
        })
    }

    /// Rebuilds a histogram from stored parts.
    pub fn from_parts(edges: Vec<f64>, counts: Vec<u64>, total: u64) -> Result<Self> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::contract(format!("{} edges for {} bins", edges.len(), counts.len())));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::contract("histogram edges must be strictly increasing"));
        }
        let inside: u64 = counts.iter().sum();
        if inside > total {
            return Err(Error::contract(format!("bins hold {inside} samples but total is {total}")));
        }
        Ok(Histogram { edges, counts, total })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn out_of_range(&self) -> u64 {
        self.total - self.counts.iter().sum::<u64>()
    }

    /// Bin probabilities followed by the out-of-range share.
    fn probabilities(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts
            .iter()
            .map(|&c| c as f64 / n)
            .chain(std::iter::once(self.out_of_range() as f64 / n))
            .collect()
    }

    /// CSV with header `bin_lo,bin_hi,count`, preceded by a `# total: n`
    /// comment so the out-of-range mass survives a round trip.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# total: {}", self.total)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            csv.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads [`Histogram::write_csv`] output. Without the total comment the
    /// total is the sum of the counts.
    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut total = None;
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.trim().strip_prefix('#') else { continue };
            if let Some(v) = rest.trim().strip_prefix("total:") {
                total = Some(v.trim().parse::<u64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad total: {e}"),
                })?);
            }
        }
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse {
                    line,
                    message: "expected bin_lo,bin_hi,count".into(),
                })
            };
            let num = |k: usize| -> Result<f64> {
                field(k)?.trim().parse().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad number: {e}"),
                })
            };
            let (lo, hi) = (num(0)?, num(1)?);
            let count = field(2)?.trim().parse::<u64>().map_err(|e| Error::Parse {
                line,
                message: format!("bad count: {e}"),
            })?;
            match edges.last() {
                None => edges.push(lo),
                Some(&prev) if prev != lo => {
                    return Err(Error::Parse {
                        line,
                        message: format!("bin starts at {lo}, previous ended at {prev}"),
                    })
                }
                Some(_) => {}
            }
            edges.push(hi);
            counts.push(count);
        }
        let total = total.unwrap_or_else(|| counts.iter().sum());
        Histogram::from_parts(edges, counts, total)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    if !(x >= lo && x <= hi) {
        return None;
    }
    if x == hi {
        return Some(edges.len() - 2);
    }
    // Index of the last edge <= x.
    Some(edges.partition_point(|&e| e <= x) - 1)
}

/// `[min(real) - 5, max(real) + 5]`.
pub fn default_range(real: &[f64]) -> Result<(f64, f64)> {
    let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::contract("default range needs finite real samples"));
    }
    Ok((lo - RANGE_PADDING, hi + RANGE_PADDING))
}

/// Histograms of `real` and `fake` on the default range of `real`.
pub fn paired_histograms(real: &[f64], fake: &[f64]) -> Result<(Histogram, Histogram)> {
    let (lo, hi) = default_range(real)?;
    Ok((Histogram::new(real, DEFAULT_BINS, lo, hi)?, Histogram::new(fake, DEFAULT_BINS, lo, hi)?))
}

/// Jensen-Shannon divergence (natural log) of the normalized counts, with
/// out-of-range mass as one extra bin.
pub fn js_divergence(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges != b.edges {
        return Err(Error::contract("js_divergence needs histograms with identical edges"));
    }
    Ok(jsd_probs(&a.probabilities(), &b.probabilities()))
}

fn jsd_probs(p: &[f64], q: &[f64]) -> f64 {
    let half_kl = |x: f64, m: f64| if x > 0.0 { 0.5 * x * (x / m).ln() } else { 0.0 };
    let d: f64 = p
        .iter()
        .zip(q)
        .map(|(&x, &y)| {
            let m = 0.5 * (x + y);
            half_kl(x, m) + half_kl(y, m)
        })
        .sum();
    d.clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCapture {
    pub captured: bool,
    /// Share of all samples within the capture box of this mode.
    pub mass_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverageReport {
    pub modes: Vec<ModeCapture>,
    pub modes_captured: usize,
    /// Share of samples inside the capture box of at least one mode.
    pub high_quality_fraction: f64,
    /// JSD between the first-coordinate histogram of the samples and the
    /// reference histogram.
    pub jsd: f64,
}

impl ModeCoverageReport {
    /// One `key: value` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "modes_captured: {}\nhigh_quality_fraction: {}\njsd: {}\n",
            self.modes_captured, self.high_quality_fraction, self.jsd
        );
        for (i, m) in self.modes.iter().enumerate() {
            out.push_str(&format!("mode_{i}_captured: {}\nmode_{i}_mass_fraction: {}\n", m.captured, m.mass_fraction));
        }
        out
    }
}

/// First column of a sample matrix.
pub fn first_coordinate<S: Scalar>(samples: &Tensor<S>) -> Vec<f64> {
    (0..samples.rows()).map(|r| samples.row(r)[0].as_f64()).collect()
}

fn check_samples<S: Scalar>(samples: &Tensor<S>, spec: &MixtureSpec, tau: f64) -> Result<(usize, usize)> {
    let (n, d) = samples.dims2("mode_coverage")?;
    if n == 0 {
        return Err(Error::contract("mode_coverage of an empty sample set"));
    }
    if d != spec.dimension() {
        return Err(Error::Dimension {
            op: "mode_coverage",
            lhs: samples.shape().to_vec(),
            rhs: vec![n, spec.dimension()],
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::contract(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok((n, d))
}

/// Per-mode capture with `jsd` measured against `reference`, whose edges
/// also bin the samples.
pub fn mode_coverage_against<S: Scalar>(samples: &Tensor<S>, spec: &MixtureSpec, tau: f64, reference: &Histogram) -> Result<ModeCoverageReport> {
    let (n, d) = check_samples(samples, spec, tau)?;
    let comps = spec.components();
    let mut inside = vec![0usize; comps.len()];
    let mut any = 0usize;
    for r in 0..n {
        let row = samples.row(r);
        let mut hit = false;
        for (c, comp) in comps.iter().enumerate() {
            let within = (0..d).all(|j| (row[j].as_f64() - comp.mean[j]).abs() <= CAPTURE_SIGMAS * comp.std[j]);
            if within {
                inside[c] += 1;
                hit = true;
            }
        }
        any += usize::from(hit);
    }
    let modes: Vec<ModeCapture> = inside
        .iter()
        .map(|&k| {
            let mass_fraction = k as f64 / n as f64;
            ModeCapture {
                captured: mass_fraction >= tau,
                mass_fraction,
            }
        })
        .collect();
    let fake = Histogram::with_edges(&first_coordinate(samples), reference.edges().to_vec())?;
    Ok(ModeCoverageReport {
        modes_captured: modes.iter().filter(|m| m.captured).count(),
        modes,
        high_quality_fraction: any as f64 / n as f64,
        jsd: js_divergence(reference, &fake)?,
    })
}

/// [`mode_coverage_against`] with the exact first-coordinate bin masses of
/// `spec` as reference, on the range the default histogram would pick for a
/// large real sample (component means +- 4 std, then padded).
pub fn mode_coverage<S: Scalar>(samples: &Tensor<S>, spec: &MixtureSpec, tau: f64) -> Result<ModeCoverageReport> {
    check_samples(samples, spec, tau)?;
    let comps = spec.components();
    let lo = comps.iter().map(|c| c.mean[0] - 4.0 * c.std[0]).fold(f64::INFINITY, f64::min) - RANGE_PADDING;
    let hi = comps.iter().map(|c| c.mean[0] + 4.0 * c.std[0]).fold(f64::NEG_INFINITY, f64::max) + RANGE_PADDING;
    let cdf = |x: f64| -> f64 {
        comps
            .iter()
            .map(|c| c.weight * 0.5 * libm::erfc(-(x - c.mean[0]) / (c.std[0] * std::f64::consts::SQRT_2)))
            .sum()
    };
    let grid = Histogram::new(&[lo], DEFAULT_BINS, lo, hi)?;
    let mut reference: Vec<f64> = grid.edges().windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
    reference.push((1.0 - reference.iter().sum::<f64>()).max(0.0));

    let partial = mode_coverage_against(samples, spec, tau, &grid)?;
    let fake = Histogram::with_edges(&first_coordinate(samples), grid.edges)?;
    Ok(ModeCoverageReport {
        jsd: jsd_probs(&reference, &fake.probabilities()),
        ..partial
    })
}
