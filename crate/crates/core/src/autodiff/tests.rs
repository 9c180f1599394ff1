use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn eval(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let root = build(&mut g, &vars).unwrap();
    g.value(root).item()
}

/// Worst element-wise relative error of analytic vs central-difference
/// gradients over all inputs.
fn fd_max_rel_err(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let h = 1e-5;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let root = build(&mut g, &vars).unwrap();
    g.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad_or_zeros(*v);
        for e in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            let a = analytic.data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let c = random(3, 2, &mut rng);
    let build = |g: &mut Graph<f64>, v: &[Var]| {
        let p = g.matmul(v[0], v[1])?;
        let q = g.mul(p, v[2])?;
        g.sum(q)
    };
    assert!(fd_max_rel_err(&[a, b, c], &build) < 1e-6);
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(2, 3, &mut rng);
    let y = random(2, 3, &mut rng).map(|v| v.abs() + 0.5);
    let s = Tensor::scalar(0.7);
    let cases: Vec<(&str, Box<Build>)> = vec![
        ("add", Box::new(|g, v| { let t = g.add(v[0], v[1])?; let t = g.square(t)?; g.sum(t) })),
        ("sub", Box::new(|g, v| { let t = g.sub(v[0], v[1])?; let t = g.square(t)?; g.mean(t) })),
        ("mul", Box::new(|g, v| { let t = g.mul(v[0], v[1])?; g.sum(t) })),
        ("div", Box::new(|g, v| { let t = g.div(v[0], v[1])?; g.sum(t) })),
        ("neg", Box::new(|g, v| { let t = g.neg(v[0])?; let t = g.mul(t, v[1])?; g.sum(t) })),
        ("log", Box::new(|g, v| { let t = g.log(v[1])?; let t = g.mul(t, v[0])?; g.sum(t) })),
        ("exp", Box::new(|g, v| { let t = g.exp(v[0])?; g.mean(t) })),
        ("leaky", Box::new(|g, v| { let t = g.leaky_relu(v[0], 0.2)?; let t = g.mul(t, v[1])?; g.sum(t) })),
        ("sigmoid", Box::new(|g, v| { let t = g.sigmoid(v[0])?; let t = g.mul(t, v[1])?; g.sum(t) })),
        ("softplus", Box::new(|g, v| { let t = g.softplus(v[0])?; let t = g.mul(t, v[1])?; g.sum(t) })),
        ("popvar", Box::new(|g, v| { let t = g.mul(v[0], v[1])?; g.population_variance(t) })),
        ("row_var", Box::new(|g, v| { let t = g.row_variance(v[0])?; let u = g.row_mean(v[1])?; let t = g.mul(t, u)?; g.sum(t) })),
        ("concat", Box::new(|g, v| { let t = g.concat_cols(&[v[0], v[1]])?; let t = g.square(t)?; let t = g.row_variance(t)?; g.sum(t) })),
        ("slice", Box::new(|g, v| { let t = g.slice_rows(v[0], 1, 2)?; let t = g.square(t)?; g.sum(t) })),
        ("sort", Box::new(|g, v| { let t = g.sort_columns(v[0])?; let t = g.mul(t, v[1])?; g.sum(t) })),
        ("bce", Box::new(|g, v| { let t = g.mul(v[0], v[1])?; g.bce_with_logits_const(t, 1.0) })),
        ("scalar_bcast", Box::new(|g, v| { let t = g.mul(v[0], v[2])?; let t = g.div(t, v[2])?; let t = g.add(t, v[2])?; let t = g.square(t)?; g.sum(t) })),
    ];
    for (name, build) in &cases {
        let err = fd_max_rel_err(&[x.clone(), y.clone(), s.clone()], build.as_ref());
        assert!(err < 1e-6, "{name}: rel err {err}");
    }
}

#[test]
fn dense_with_masks_matches_composed_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = random(5, 4, &mut rng);
    let w = random(4, 3, &mut rng);
    let b = Tensor::vector(vec![0.3, -0.2, 0.9]);
    let in_mask = Tensor::vector(vec![1.0, 0.0, 1.0, 1.0]).reshape(vec![1, 4]).unwrap();
    let out_mask = Tensor::vector(vec![0.0, 1.0, 1.0]).reshape(vec![1, 3]).unwrap();
    let up = random(5, 3, &mut rng);

    let fused = |g: &mut Graph<f64>, v: &[Var]| {
        let z = g.dense(v[0], v[1], v[2], Some(vec![0, 2, 3]), Some(vec![1, 2]))?;
        let z = g.mul(z, v[3])?;
        g.sum(z)
    };
    // ((h ⊙ m_in) W + 1 bᵀ) ⊙ m_out written out with rank-2 primitives; the
    // bias enters as a [1 x n] leaf here.
    let composed = |g: &mut Graph<f64>, v: &[Var], masks: &[Var]| {
        let rows = g.value(v[0]).rows();
        let ones = g.constant(Tensor::ones(&[rows, 1]))?;
        let mi = g.matmul(ones, masks[0])?;
        let hm = g.mul(v[0], mi)?;
        let z = g.matmul(hm, v[1])?;
        let bias = g.matmul(ones, v[2])?;
        let z = g.add(z, bias)?;
        let mo = g.matmul(ones, masks[1])?;
        let z = g.mul(z, mo)?;
        let z = g.mul(z, v[3])?;
        g.sum(z)
    };

    let mut g1 = Graph::new();
    let v1: Vec<Var> = [&h, &w, &b, &up].iter().map(|t| g1.param((*t).clone()).unwrap()).collect();
    let r1 = fused(&mut g1, &v1).unwrap();
    g1.backward(r1).unwrap();

    let mut g2 = Graph::new();
    let b_row = b.clone().reshape(vec![1, 3]).unwrap();
    let v2: Vec<Var> = [&h, &w, &b_row, &up].iter().map(|t| g2.param((*t).clone()).unwrap()).collect();
    let m2 = [g2.constant(in_mask.clone()).unwrap(), g2.constant(out_mask.clone()).unwrap()];
    let r2 = composed(&mut g2, &v2, &m2).unwrap();
    g2.backward(r2).unwrap();

    assert!((g1.value(r1).item() - g2.value(r2).item()).abs() < 1e-12);
    for (a, b) in v1.iter().zip(&v2) {
        let ga = g1.grad_or_zeros(*a);
        let gb = g2.grad_or_zeros(*b);
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
    // Dropped input row and dropped output column of W get exactly zero.
    let gw = g1.grad_or_zeros(v1[1]);
    assert!((0..3).all(|j| gw.get2(1, j) == 0.0));
    assert!((0..4).all(|i| gw.get2(i, 0) == 0.0));
    assert_eq!(g1.grad_or_zeros(v1[2]).data()[0], 0.0);
}

#[test]
fn known_values() {
    let mut g = Graph::new();
    let z = g.scalar(0.0).unwrap();
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);

    let flat = g.constant(Tensor::vector(vec![1.0, 1.0, 1.0, 1.0])).unwrap();
    let v = g.population_variance(flat).unwrap();
    assert_eq!(g.value(v).item(), 0.0);

    let spread = g.constant(Tensor::vector(vec![-5.0, 7.0, -5.0, 7.0])).unwrap();
    let v = g.population_variance(spread).unwrap();
    let m = g.mean(spread).unwrap();
    assert_eq!(g.value(v).item(), 36.0);
    assert_eq!(g.value(m).item(), 1.0);
}

#[test]
fn bce_with_logits_values_and_stability() {
    let ln2 = std::f64::consts::LN_2;
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0)).unwrap();
    let l = g.bce_with_logits(x, &Tensor::scalar(1.0)).unwrap();
    assert!((g.value(l).item() - ln2).abs() < 1e-15);

    let x2 = g.param(Tensor::vector(vec![0.0, 0.0])).unwrap();
    let l2 = g.bce_with_logits(x2, &Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert!((g.value(l2).item() - ln2).abs() < 1e-15);

    // Naive formula is accurate for small magnitudes.
    for &logit in &[-4.0f64, -1.3, -0.2, 0.4, 2.5, 5.0] {
        for &t in &[0.0, 1.0] {
            let p = 1.0 / (1.0 + (-logit).exp());
            let oracle = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            let mut g = Graph::new();
            let x = g.param(Tensor::scalar(logit)).unwrap();
            let l = g.bce_with_logits(x, &Tensor::scalar(t)).unwrap();
            assert!((g.value(l).item() - oracle).abs() < 1e-12);
        }
    }

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(50.0)).unwrap();
    let l = g.bce_with_logits(x, &Tensor::scalar(1.0)).unwrap();
    g.backward(l).unwrap();
    assert!(g.value(l).item() < 1e-20);
    assert!(g.grad(x).unwrap().item().is_finite());
    let x = g.param(Tensor::scalar(-800.0)).unwrap();
    let l = g.bce_with_logits(x, &Tensor::scalar(1.0)).unwrap();
    assert!((g.value(l).item() - 800.0).abs() < 1e-9);
}

#[test]
fn error_paths() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(
        g.bce_with_logits(x, &Tensor::vector(vec![0.5, 1.0])),
        Err(Error::Domain { .. })
    ));
    assert!(matches!(
        g.bce_with_logits(x, &Tensor::vector(vec![1.0, 1.0, 0.0])),
        Err(Error::Dimension { .. })
    ));
    let tiny = g.constant(Tensor::vector(vec![1.0, 1e-13])).unwrap();
    assert!(matches!(g.div(x, tiny), Err(Error::NumericGuard { .. })));
    let neg = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    assert!(matches!(g.log(neg), Err(Error::Domain { .. })));
    let three = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    assert!(matches!(g.add(x, three), Err(Error::Dimension { .. })));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    let big = g.constant(Tensor::scalar(1000.0)).unwrap();
    assert!(matches!(g.exp(big), Err(Error::NonFinite { .. })));
}

#[test]
fn backward_of_sum_is_ones_and_accumulates() {
    let mut g = Graph::new();
    let w = g.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])).unwrap();
    let s = g.sum(w).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap(), &Tensor::ones(&[2, 2]));
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap(), &Tensor::full(&[2, 2], 2.0));
    g.zero_grad();
    assert!(g.grad(w).is_none());
}

#[test]
fn scalar_logistic_gradient_closed_form() {
    for &(w0, x0) in &[(0.3f64, 1.7f64), (-1.2, 0.4), (2.0, -3.0)] {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::scalar(w0)).unwrap();
        let x = g.constant(Tensor::scalar(x0)).unwrap();
        let wx = g.mul(w, x).unwrap();
        let l = g.bce_with_logits_const(wx, 1.0).unwrap();
        g.backward(l).unwrap();
        let sig = 1.0 / (1.0 + (-(w0 * x0)).exp());
        assert!((g.grad(w).unwrap().item() - (sig - 1.0) * x0).abs() < 1e-14);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let w = g.param(Tensor::vector(vec![3.0, 4.0])).unwrap();
    let p = g.mul(c, w).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(w).unwrap().data(), &[1.0, 2.0]);
}

fn composite(g: &mut Graph<f64>, v: &[Var]) -> Result<(Var, Var)> {
    let z = g.matmul(v[0], v[1])?;
    let a = g.leaky_relu(z, 0.2)?;
    let f = g.bce_with_logits_const(a, 1.0)?;
    let s = g.sigmoid(z)?;
    let q = g.row_variance(s)?;
    let h = g.mean(q)?;
    Ok((f, h))
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(6, 5, &mut rng);
    let b = random(5, 4, &mut rng);
    let run = || {
        let mut g = Graph::new();
        let v = [g.param(a.clone()).unwrap(), g.param(b.clone()).unwrap()];
        let (f, h) = composite(&mut g, &v).unwrap();
        let r = g.add(f, h).unwrap();
        g.backward(r).unwrap();
        (g.value(r).item(), g.grad_or_zeros(v[0]), g.grad_or_zeros(v[1]))
    };
    let (x1, a1, b1) = run();
    let (x2, a2, b2) = run();
    assert_eq!(x1.to_bits(), x2.to_bits());
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(seed in 0u64..1000, ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(4, 3, &mut rng);
        let b = random(3, 2, &mut rng);
        let grads = |wf: f64, wh: f64| {
            let mut g = Graph::new();
            let v = [g.param(a.clone()).unwrap(), g.param(b.clone()).unwrap()];
            let (f, h) = composite(&mut g, &v).unwrap();
            let f = g.scale(f, wf).unwrap();
            let h = g.scale(h, wh).unwrap();
            let r = g.add(f, h).unwrap();
            g.backward(r).unwrap();
            (g.grad_or_zeros(v[0]), g.grad_or_zeros(v[1]))
        };
        let (fa, fb) = grads(1.0, 0.0);
        let (ha, hb) = grads(0.0, 1.0);
        let (ca_, cb_) = grads(ca, cb);
        for (k, (x, y)) in ca_.data().iter().zip(fa.data().iter().zip(ha.data())).enumerate() {
            prop_assert!((x - (ca * y.0 + cb * y.1)).abs() < 1e-12, "a[{k}]");
        }
        for (x, y) in cb_.data().iter().zip(fb.data().iter().zip(hb.data())) {
            prop_assert!((x - (ca * y.0 + cb * y.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(m, k, &mut rng);
        let b = random(k, n, &mut rng);
        let w = random(m, n, &mut rng);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let p = g.matmul(v[0], v[1])?;
            let p = g.mul(p, v[2])?;
            g.sum(p)
        };
        prop_assert!(fd_max_rel_err(&[a, b, w], &build) < 1e-6);
    }
}
