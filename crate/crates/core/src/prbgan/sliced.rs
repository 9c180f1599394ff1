//! Sliced Wasserstein distance between feature sets.
//!
//! Both sets are projected on `k` unit directions, each projected column is
//! sorted, and paired order statistics are compared. Values are the bare sum
//! of squared differences divided by `n * k`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const UNIT_TOLERANCE: f64 = 1e-9;

/// `[d x k]` directions drawn uniformly on the unit sphere.
pub fn random_projections<S: Scalar, R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Tensor<S>> {
    if d == 0 || k == 0 {
        return Err(Error::contract("projections need d >= 1 and k >= 1"));
    }
    let raw: Vec<f64> = (0..d * k).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = vec![S::zero(); d * k];
    for j in 0..k {
        let mut norm = (0..d).map(|i| raw[i * k + j] * raw[i * k + j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            norm = 1.0;
        }
        for i in 0..d {
            out[i * k + j] = S::of(raw[i * k + j] / norm);
        }
    }
    Tensor::new(vec![d, k], out)
}

/// Rescales every column to unit length, returning how many needed it.
pub fn normalize_projections<S: Scalar>(proj: &Tensor<S>) -> Result<(Tensor<S>, usize)> {
    let (d, k) = proj.dims2("projections")?;
    let mut out = proj.clone();
    let mut fixed = 0;
    for j in 0..k {
        let norm = (0..d).map(|i| proj.get2(i, j).as_f64().powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::contract(format!("projection column {j} is zero")));
        }
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            fixed += 1;
            let norm = S::of(norm);
            for i in 0..d {
                out.data_mut()[i * k + j] = proj.get2(i, j) / norm;
            }
        }
    }
    Ok((out, fixed))
}

/// Distance value plus the number of projection columns that had to be
/// renormalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicedW {
    pub value: f64,
    pub renormalized: usize,
}

fn check_sets(real: &[usize], fake: &[usize], proj: &[usize]) -> Result<()> {
    if real.len() != 2 || fake.len() != 2 || proj.len() != 2 {
        return Err(Error::contract("sliced-W expects matrices"));
    }
    if real[0] != fake[0] {
        return Err(Error::contract(format!("sliced-W needs equal row counts, got {} and {}", real[0], fake[0])));
    }
    if real[1] != fake[1] || real[1] != proj[0] {
        return Err(Error::Dimension {
            op: "sliced_w",
            lhs: real.to_vec(),
            rhs: proj.to_vec(),
        });
    }
    Ok(())
}

pub fn sliced_w_distance<S: Scalar>(real: &Tensor<S>, fake: &Tensor<S>, projections: &Tensor<S>) -> Result<SlicedW> {
    check_sets(real.shape(), fake.shape(), projections.shape())?;
    let (proj, renormalized) = normalize_projections(projections)?;
    let (n, k) = (real.rows(), proj.cols());
    let pr = real.matmul(&proj)?;
    let pf = fake.matmul(&proj)?;
    let mut total = 0.0;
    for j in 0..k {
        let mut a = pr.column(j);
        let mut b = pf.column(j);
        a.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        b.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        total += a.iter().zip(&b).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum::<f64>();
    }
    Ok(SlicedW {
        value: total / (n * k) as f64,
        renormalized,
    })
}

/// Differentiable [`sliced_w_distance`]; gradients reach both feature sets.
pub fn sliced_w_graph<S: Scalar>(g: &mut Graph<S>, real: Var, fake: Var, projections: &Tensor<S>) -> Result<(Var, usize)> {
    check_sets(g.value(real).shape(), g.value(fake).shape(), projections.shape())?;
    let (proj, renormalized) = normalize_projections(projections)?;
    let omega = g.constant(proj)?;
    let pr = g.matmul(real, omega)?;
    let pf = g.matmul(fake, omega)?;
    let sr = g.sort_columns(pr)?;
    let sf = g.sort_columns(pf)?;
    let diff = g.sub(sf, sr)?;
    let sq = g.square(diff)?;
    Ok((g.mean(sq)?, renormalized))
}
