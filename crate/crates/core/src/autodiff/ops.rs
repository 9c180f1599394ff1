use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Gathered inputs and weights of a masked dense op, kept for backward.
type Packed<S> = (Vec<S>, Vec<S>);

const DIV_GUARD: f64 = 1e-12;

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, S),
    Square(Var),
    Log(Var),
    Exp(Var),
    LeakyRelu(Var, S),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    PopulationVariance(Var),
    RowMean(Var),
    RowVariance(Var),
    MatMul(Var, Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        in_keep: Option<Vec<usize>>,
        out_keep: Option<Vec<usize>>,
        /// Kept input columns and kept weight block from the forward pass.
        packed: Option<Packed<S>>,
    },
    BceWithLogits(Var, Vec<S>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    /// Source row of every output element, column-major by output column.
    SortColumns(Var, Vec<usize>),
}

impl<S: Scalar> Op<S> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::PopulationVariance(..) => "population_variance",
            Op::RowMean(..) => "row_mean",
            Op::RowVariance(..) => "row_variance",
            Op::MatMul(..) => "matmul",
            Op::Dense { .. } => "dense",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SortColumns(..) => "sort_columns",
        }
    }

    /// Gradient contributions to each parent given the output gradient `g`.
    pub(crate) fn backward(&self, graph: &Graph<S>, out: &Tensor<S>, g: &Tensor<S>) -> Result<Vec<(Var, Tensor<S>)>> {
        let val = |v: Var| graph.value(v);
        let wants = |v: Var| graph.requires_grad(v);
        let mut res = Vec::new();
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self, Op::Sub(..)) { -S::one() } else { S::one() };
                if wants(*a) {
                    res.push((*a, unbroadcast(g.clone(), val(*a))));
                }
                if wants(*b) {
                    res.push((*b, unbroadcast(g.map(|x| sign * x), val(*b))));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    res.push((*a, unbroadcast(zip_with(g, bv, |gi, bi| gi * bi), av)));
                }
                if wants(*b) {
                    res.push((*b, unbroadcast(zip_with(g, av, |gi, ai| gi * ai), bv)));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    res.push((*a, unbroadcast(zip_with(g, bv, |gi, bi| gi / bi), av)));
                }
                if wants(*b) {
                    // d(a/b)/db = -(a/b)/b, and `out` already holds a/b.
                    let q = zip_with(out, bv, |o, bi| o / bi);
                    res.push((*b, unbroadcast(zip_with(g, &q, |gi, qi| -gi * qi), bv)));
                }
            }
            Op::Neg(a) => res.push((*a, g.map(|x| -x))),
            Op::Scale(a, c) => {
                let c = *c;
                res.push((*a, g.map(|x| x * c)));
            }
            Op::Square(a) => {
                let two = S::of(2.0);
                res.push((*a, zip_with(g, val(*a), |gi, x| gi * two * x)));
            }
            Op::Log(a) => res.push((*a, zip_with(g, val(*a), |gi, x| gi / x))),
            Op::Exp(a) => res.push((*a, zip_with(g, out, |gi, e| gi * e))),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                res.push((*a, zip_with(g, val(*a), |gi, x| if x > S::zero() { gi } else { gi * s })));
            }
            Op::Sigmoid(a) => res.push((*a, zip_with(g, out, |gi, y| gi * y * (S::one() - y)))),
            Op::Softplus(a) => res.push((*a, zip_with(g, val(*a), |gi, x| gi * sigmoid(x)))),
            Op::Sum(a) => res.push((*a, Tensor::full(val(*a).shape(), g.item()))),
            Op::Mean(a) => {
                let av = val(*a);
                let n = S::of(av.numel() as f64);
                res.push((*a, Tensor::full(av.shape(), g.item() / n)));
            }
            Op::PopulationVariance(a) => {
                let av = val(*a);
                let n = S::of(av.numel() as f64);
                let mu = av.mean();
                let k = S::of(2.0) * g.item() / n;
                res.push((*a, av.map(|x| k * (x - mu))));
            }
            Op::RowMean(a) => {
                let av = val(*a);
                let (r, c) = av.dims2("row_mean")?;
                let n = S::of(c as f64);
                res.push((*a, Tensor::from_fn(r, c, |i, _| g.data()[i] / n)));
            }
            Op::RowVariance(a) => {
                let av = val(*a);
                let (r, c) = av.dims2("row_variance")?;
                let n = S::of(c as f64);
                let two = S::of(2.0);
                let means: Vec<S> = (0..r).map(|i| row_mean(av.row(i))).collect();
                res.push((*a, Tensor::from_fn(r, c, |i, j| two * g.data()[i] * (av.get2(i, j) - means[i]) / n)));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = av.dims2("matmul")?;
                let n = bv.cols();
                if wants(*a) {
                    // g [m x n] · bᵀ [n x k]
                    let mut d = vec![S::zero(); m * k];
                    S::gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), S::zero(), &mut d);
                    res.push((*a, Tensor::new(vec![m, k], d)?));
                }
                if wants(*b) {
                    // aᵀ [k x m] · g [m x n]
                    let mut d = vec![S::zero(); k * n];
                    S::gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), S::zero(), &mut d);
                    res.push((*b, Tensor::new(vec![k, n], d)?));
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
                in_keep,
                out_keep,
                packed,
            } => dense_backward(
                graph,
                g,
                (*input, *weight, *bias),
                in_keep.as_deref(),
                out_keep.as_deref(),
                packed.as_ref(),
                &mut res,
            )?,
            Op::BceWithLogits(a, targets) => {
                let av = val(*a);
                let n = S::of(av.numel() as f64);
                let gi = g.item();
                let data = av
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| gi * (sigmoid(x) - t) / n)
                    .collect();
                res.push((*a, Tensor::new(av.shape().to_vec(), data)?));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2("concat_cols")?;
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if wants(*p) {
                        res.push((*p, Tensor::from_fn(r, c, |i, j| g.data()[i * total + offset + j])));
                    }
                    offset += c;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).dims2("slice_rows")?;
                let mut d = vec![S::zero(); r * c];
                d[start * c..start * c + g.numel()].copy_from_slice(g.data());
                res.push((*a, Tensor::new(vec![r, c], d)?));
            }
            Op::SortColumns(a, perm) => {
                let (r, c) = g.dims2("sort_columns")?;
                let mut d = vec![S::zero(); r * c];
                for j in 0..c {
                    for i in 0..r {
                        let src = perm[j * r + i];
                        d[src * c + j] = d[src * c + j] + g.data()[i * c + j];
                    }
                }
                res.push((*a, Tensor::new(vec![r, c], d)?));
            }
        }
        Ok(res)
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn row_mean<S: Scalar>(row: &[S]) -> S {
    row.iter().copied().sum::<S>() / S::of(row.len() as f64)
}

fn at<S: Scalar>(t: &Tensor<S>, i: usize) -> S {
    if t.numel() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn zip_with<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let shape = if a.numel() >= b.numel() { a.shape() } else { b.shape() };
    let n = a.numel().max(b.numel());
    let data = (0..n).map(|i| f(at(a, i), at(b, i))).collect();
    Tensor::new(shape.to_vec(), data).expect("broadcast shape")
}

/// Sums a broadcast gradient back onto a one-element operand.
fn unbroadcast<S: Scalar>(g: Tensor<S>, target: &Tensor<S>) -> Tensor<S> {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::full(target.shape(), g.sum())
    }
}

fn gather_cols<S: Scalar>(t: &Tensor<S>, keep: &[usize]) -> Vec<S> {
    let c = t.cols();
    let mut out = Vec::with_capacity(t.rows() * keep.len());
    for r in 0..t.rows() {
        let row = &t.data()[r * c..(r + 1) * c];
        out.extend(keep.iter().map(|&j| row[j]));
    }
    out
}

fn gather_block<S: Scalar>(w: &Tensor<S>, rows: &[usize], cols: &[usize]) -> Vec<S> {
    let c = w.cols();
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        let row = &w.data()[r * c..(r + 1) * c];
        out.extend(cols.iter().map(|&j| row[j]));
    }
    out
}

fn dense_forward<S: Scalar>(
    h: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    in_keep: Option<&[usize]>,
    out_keep: Option<&[usize]>,
) -> Result<(Tensor<S>, Option<Packed<S>>)> {
    let (m, k) = h.dims2("dense")?;
    let (k2, n) = w.dims2("dense")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "dense",
            lhs: h.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if b.numel() != n {
        return Err(Error::Dimension {
            op: "dense bias",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if in_keep.is_none() && out_keep.is_none() {
        let mut out: Vec<S> = (0..m).flat_map(|_| b.data().iter().copied()).collect();
        S::gemm(m, k, n, h.data(), (k as isize, 1), w.data(), (n as isize, 1), S::one(), &mut out);
        return Ok((Tensor::new(vec![m, n], out)?, None));
    }
    let all_in: Vec<usize>;
    let ki = match in_keep {
        Some(ix) => ix,
        None => {
            all_in = (0..k).collect();
            &all_in
        }
    };
    let all_out: Vec<usize>;
    let ko = match out_keep {
        Some(ix) => ix,
        None => {
            all_out = (0..n).collect();
            &all_out
        }
    };
    let (kk, nk) = (ki.len(), ko.len());
    let hs = gather_cols(h, ki);
    let ws = gather_block(w, ki, ko);
    let mut zs: Vec<S> = (0..m).flat_map(|_| ko.iter().map(|&j| b.data()[j])).collect();
    if kk > 0 && nk > 0 {
        S::gemm(m, kk, nk, &hs, (kk as isize, 1), &ws, (nk as isize, 1), S::one(), &mut zs);
    }
    let mut out = vec![S::zero(); m * n];
    for r in 0..m {
        for (jj, &j) in ko.iter().enumerate() {
            out[r * n + j] = zs[r * nk + jj];
        }
    }
    Ok((Tensor::new(vec![m, n], out)?, Some((hs, ws))))
}

fn dense_backward<S: Scalar>(
    graph: &Graph<S>,
    g: &Tensor<S>,
    (input, weight, bias): (Var, Var, Var),
    in_keep: Option<&[usize]>,
    out_keep: Option<&[usize]>,
    packed: Option<&Packed<S>>,
    res: &mut Vec<(Var, Tensor<S>)>,
) -> Result<()> {
    let h = graph.value(input);
    let w = graph.value(weight);
    let (m, k) = h.dims2("dense")?;
    let n = w.cols();

    if in_keep.is_none() && out_keep.is_none() {
        if graph.requires_grad(input) {
            let mut d = vec![S::zero(); m * k];
            S::gemm(m, n, k, g.data(), (n as isize, 1), w.data(), (1, n as isize), S::zero(), &mut d);
            res.push((input, Tensor::new(vec![m, k], d)?));
        }
        if graph.requires_grad(weight) {
            let mut d = vec![S::zero(); k * n];
            S::gemm(k, m, n, h.data(), (1, k as isize), g.data(), (n as isize, 1), S::zero(), &mut d);
            res.push((weight, Tensor::new(vec![k, n], d)?));
        }
        if graph.requires_grad(bias) {
            let mut d = vec![S::zero(); n];
            for r in 0..m {
                for (dj, &gj) in d.iter_mut().zip(g.row(r)) {
                    *dj = *dj + gj;
                }
            }
            res.push((bias, Tensor::new(graph.value(bias).shape().to_vec(), d)?));
        }
        return Ok(());
    }

    let all_in: Vec<usize>;
    let ki = match in_keep {
        Some(ix) => ix,
        None => {
            all_in = (0..k).collect();
            &all_in
        }
    };
    let all_out: Vec<usize>;
    let ko = match out_keep {
        Some(ix) => ix,
        None => {
            all_out = (0..n).collect();
            &all_out
        }
    };
    let (kk, nk) = (ki.len(), ko.len());
    let gs = gather_cols(g, ko);

    if graph.requires_grad(input) {
        let mut d = vec![S::zero(); m * k];
        if kk > 0 && nk > 0 {
            let fresh;
            let ws = match packed {
                Some((_, ws)) => ws,
                None => {
                    fresh = gather_block(w, ki, ko);
                    &fresh
                }
            };
            let mut ds = vec![S::zero(); m * kk];
            S::gemm(m, nk, kk, &gs, (nk as isize, 1), ws, (1, nk as isize), S::zero(), &mut ds);
            for r in 0..m {
                for (ii, &i) in ki.iter().enumerate() {
                    d[r * k + i] = ds[r * kk + ii];
                }
            }
        }
        res.push((input, Tensor::new(vec![m, k], d)?));
    }
    if graph.requires_grad(weight) {
        let mut d = vec![S::zero(); k * n];
        if kk > 0 && nk > 0 {
            let fresh;
            let hs = match packed {
                Some((hs, _)) => hs,
                None => {
                    fresh = gather_cols(h, ki);
                    &fresh
                }
            };
            let mut ds = vec![S::zero(); kk * nk];
            S::gemm(kk, m, nk, hs, (1, kk as isize), &gs, (nk as isize, 1), S::zero(), &mut ds);
            for (ii, &i) in ki.iter().enumerate() {
                for (jj, &j) in ko.iter().enumerate() {
                    d[i * n + j] = ds[ii * nk + jj];
                }
            }
        }
        res.push((weight, Tensor::new(vec![k, n], d)?));
    }
    if graph.requires_grad(bias) {
        let mut d = vec![S::zero(); n];
        for r in 0..m {
            for (jj, &j) in ko.iter().enumerate() {
                d[j] = d[j] + gs[r * nk + jj];
            }
        }
        res.push((bias, Tensor::new(graph.value(bias).shape().to_vec(), d)?));
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() && av.numel() != 1 && bv.numel() != 1 {
            return Err(Error::Dimension {
                op: op_name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let value = zip_with(av, bv, f);
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient; any `|b| < 1e-12` is rejected.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let guard = S::of(DIV_GUARD);
        if let Some(&bad) = self.value(b).data().iter().find(|d| d.abs() < guard) {
            return Err(Error::NumericGuard {
                op: "div",
                value: bad.as_f64().abs(),
            });
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        let cv = self.scalar(c)?;
        self.add(a, cv)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Natural log; non-positive input is a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|x| **x <= S::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        self.unary(a, |x| if x > S::zero() { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Divide-by-n variance over all elements.
    pub fn population_variance(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mu = av.mean();
        let var = av.data().iter().map(|&x| (x - mu) * (x - mu)).sum::<S>() / S::of(av.numel() as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(var), Op::PopulationVariance(a), rg)
    }

    /// Per-row mean of a matrix, `[r x c] -> [r x 1]`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, _) = av.dims2("row_mean")?;
        let value = Tensor::from_fn(r, 1, |i, _| row_mean(av.row(i)));
        let rg = self.rg(&[a]);
        self.push(value, Op::RowMean(a), rg)
    }

    /// Per-row divide-by-c variance of a matrix, `[r x c] -> [r x 1]`.
    pub fn row_variance(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, _) = av.dims2("row_variance")?;
        let value = Tensor::from_fn(r, 1, |i, _| {
            let row = av.row(i);
            let mu = row_mean(row);
            row.iter().map(|&x| (x - mu) * (x - mu)).sum::<S>() / S::of(row.len() as f64)
        });
        let rg = self.rg(&[a]);
        self.push(value, Op::RowVariance(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Affine layer with unit masks: `((h ⊙ in_mask) · W + b) ⊙ out_mask`.
    ///
    /// Masks are given as the sorted indices of kept columns; `None` keeps
    /// everything. Dropped input columns are never read, dropped output
    /// columns are exactly zero, and only the kept block of `W` is multiplied.
    pub fn dense(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        in_keep: Option<Vec<usize>>,
        out_keep: Option<Vec<usize>>,
    ) -> Result<Var> {
        let (value, packed) = dense_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            in_keep.as_deref(),
            out_keep.as_deref(),
        )?;
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
                in_keep,
                out_keep,
                packed: packed.filter(|_| rg),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy evaluated from logits in log-sum-exp form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        if let Some(t) = targets.data().iter().find(|t| **t != S::zero() && **t != S::one()) {
            return Err(Error::Domain {
                op: "bce_with_logits",
                detail: format!("target {t} outside {{0, 1}}"),
            });
        }
        let n = S::of(lv.numel() as f64);
        let loss = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(S::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<S>()
            / n;
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, targets.data().to_vec()), rg)
    }

    /// Same as [`Graph::bce_with_logits`] against a constant target.
    pub fn bce_with_logits_const(&mut self, logits: Var, target: S) -> Result<Var> {
        let t = Tensor::full(self.value(logits).shape(), target);
        self.bce_with_logits(logits, &t)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero parts"))?;
        let r = self.value(*first).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![r, total], data)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_rows")?;
        if start >= end || end > r {
            return Err(Error::contract(format!("slice_rows {start}..{end} of {r} rows")));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![end - start, c], data)?, Op::SliceRows(a, start), rg)
    }

    /// Sorts every column ascending; the gradient follows the permutation.
    pub fn sort_columns(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2("sort_columns")?;
        let mut perm = Vec::with_capacity(r * c);
        let mut out = vec![S::zero(); r * c];
        for j in 0..c {
            let mut idx: Vec<usize> = (0..r).collect();
            idx.sort_by(|&x, &y| av.get2(x, j).partial_cmp(&av.get2(y, j)).expect("finite values"));
            for (i, &src) in idx.iter().enumerate() {
                out[i * c + j] = av.get2(src, j);
            }
            perm.extend(idx);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![r, c], out)?, Op::SortColumns(a, perm), rg)
    }
}

impl<S: Scalar> Graph<S> {
    /// Which side of every kink the current values sit on: leaky-relu input
    /// signs and sort permutations. Two evaluations with equal signatures lie
    /// on the same smooth piece of the graph's function.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) => sig.extend(self.value(*a).data().iter().map(|x| usize::from(*x > S::zero()))),
                Op::SortColumns(_, perm) => sig.extend_from_slice(perm),
                _ => {}
            }
        }
        sig
    }
}
