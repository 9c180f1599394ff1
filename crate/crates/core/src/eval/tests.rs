use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synthdata::{grid_mixture_2d, paper_mixture, sample};

fn column(v: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
}

#[test]
fn midpoint_sample_falls_in_upper_bin() {
    let h = Histogram::new(&[0.5], 2, 0.0, 1.0).unwrap();
    assert_eq!(h.counts(), &[0, 1]);
}

#[test]
fn upper_edge_belongs_to_last_bin() {
    let h = Histogram::new(&[0.0, 1.0, 0.25], 4, 0.0, 1.0).unwrap();
    assert_eq!(h.counts(), &[1, 1, 0, 1]);
    assert_eq!(h.out_of_range(), 0);
}

#[test]
fn uniform_counts_within_binomial_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let h = Histogram::new(&xs, 10, 0.0, 1.0).unwrap();
    let sigma = (n as f64 * 0.1 * 0.9).sqrt();
    for &c in h.counts() {
        assert!((c as f64 - 1e5).abs() <= 3.0 * sigma, "count {c}");
    }
}

#[test]
fn out_of_range_samples_tracked() {
    let h = Histogram::new(&[-3.0, 7.0, 1e9], 5, 0.0, 1.0).unwrap();
    assert!(h.counts().iter().all(|&c| c == 0));
    assert_eq!(h.out_of_range(), 3);
    assert_eq!(h.total(), 3);
}

#[test]
fn histogram_contract_errors() {
    assert!(matches!(Histogram::new(&[], 3, 0.0, 1.0), Err(Error::Contract(_))));
    assert!(matches!(Histogram::new(&[0.1], 0, 0.0, 1.0), Err(Error::Contract(_))));
    assert!(matches!(Histogram::new(&[0.1], 3, 1.0, 1.0), Err(Error::Contract(_))));
    assert!(Histogram::from_parts(vec![0.0, 1.0, 1.0], vec![0, 0], 0).is_err());
    assert!(Histogram::from_parts(vec![0.0, 1.0], vec![4], 3).is_err());
}

#[test]
fn csv_round_trip_keeps_out_of_range_mass() {
    let xs = [0.1, 0.2, 0.35, 0.999, -4.0, 2.5];
    let h = Histogram::new(&xs, 7, 0.0, 1.0).unwrap();
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().nth(1).unwrap() == "bin_lo,bin_hi,count");
    let back = Histogram::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, h);
}

#[test]
fn csv_reader_reports_gaps_with_line() {
    let text = "bin_lo,bin_hi,count\n0,1,3\n2,3,1\n";
    match Histogram::read_csv(text.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    let plain = Histogram::read_csv("bin_lo,bin_hi,count\n0,1,3\n1,2,1\n".as_bytes()).unwrap();
    assert_eq!(plain.total(), 4);
}

fn one_hot(bins: usize, at: usize) -> Histogram {
    let mut counts = vec![0; bins];
    counts[at] = 10;
    let edges = (0..=bins).map(|i| i as f64).collect();
    Histogram::from_parts(edges, counts, 10).unwrap()
}

#[test]
fn jsd_reference_values() {
    let h = Histogram::new(&[0.1, 0.5, 0.7], 4, 0.0, 1.0).unwrap();
    assert_eq!(js_divergence(&h, &h).unwrap(), 0.0);
    let d = js_divergence(&one_hot(3, 0), &one_hot(3, 2)).unwrap();
    assert!((d - std::f64::consts::LN_2).abs() < 1e-15);

    let a = Histogram::from_parts(vec![0.0, 1.0, 2.0], vec![5, 5], 10).unwrap();
    let b = Histogram::from_parts(vec![0.0, 1.0, 2.0], vec![10, 0], 10).unwrap();
    // Direct summation: M = [0.75, 0.25].
    let kl_pm = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
    let kl_qm = 1.0 * (1.0f64 / 0.75).ln();
    let oracle = 0.5 * kl_pm + 0.5 * kl_qm;
    let got = js_divergence(&a, &b).unwrap();
    assert!((got - oracle).abs() < 1e-15);
    // Entropy form H(M) - (H(P) + H(Q)) / 2 with H(Q) = 0.
    let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    let entropy_form = h(&[0.75, 0.25]) - 0.5 * h(&[0.5, 0.5]);
    assert!((got - entropy_form).abs() < 1e-15);
    assert!((got - 0.2158).abs() < 1e-4);
}

#[test]
fn jsd_counts_out_of_range_mass() {
    let inside = Histogram::new(&[0.5, 0.5], 2, 0.0, 1.0).unwrap();
    let outside = Histogram::new(&[9.0, 9.0], 2, 0.0, 1.0).unwrap();
    let d = js_divergence(&inside, &outside).unwrap();
    assert!((d - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn jsd_edge_mismatch_is_contract_error() {
    let a = Histogram::new(&[0.5], 2, 0.0, 1.0).unwrap();
    let b = Histogram::new(&[0.5], 2, 0.0, 2.0).unwrap();
    assert!(matches!(js_divergence(&a, &b), Err(Error::Contract(_))));
}

#[test]
fn mixture_samples_capture_every_mode() {
    let spec = paper_mixture();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Tensor<f64> = sample(&spec, 10_000, &mut rng).unwrap();
    let r = mode_coverage(&xs, &spec, DEFAULT_TAU).unwrap();
    assert_eq!(r.modes_captured, 5);
    assert!(r.high_quality_fraction > 0.99);
    assert!(r.jsd < 0.01, "jsd {}", r.jsd);
    // The 3-sigma boxes of the modes at 10 and 20 overlap.
    let total: f64 = r.modes.iter().map(|m| m.mass_fraction).sum();
    assert!(total >= r.high_quality_fraction);
}

#[test]
fn single_point_captures_one_mode() {
    let spec = paper_mixture();
    let r = mode_coverage(&column(&[60.0; 50]), &spec, DEFAULT_TAU).unwrap();
    assert_eq!(r.modes_captured, 1);
    assert!(r.modes[2].captured);
    assert_eq!(r.modes[2].mass_fraction, 1.0);
}

#[test]
fn far_samples_capture_nothing() {
    let spec = paper_mixture();
    let r = mode_coverage(&column(&[500.0, -300.0, 40.0]), &spec, DEFAULT_TAU).unwrap();
    assert_eq!(r.modes_captured, 0);
    assert_eq!(r.high_quality_fraction, 0.0);
    assert!(r.jsd > 0.69);
}

#[test]
fn capture_is_componentwise_in_two_dimensions() {
    let spec = grid_mixture_2d();
    let pts = Tensor::from_rows(&[vec![-4.0, -4.0], vec![-4.0, 0.1], vec![-4.12, 4.0]]);
    let r = mode_coverage(&pts, &spec, 0.3).unwrap();
    assert_eq!(r.modes_captured, 3);
    assert!((r.high_quality_fraction - 1.0).abs() < 1e-15);
    let r = mode_coverage(&Tensor::from_rows(&[vec![-4.0, -3.8]]), &spec, 0.5).unwrap();
    assert_eq!(r.modes_captured, 0);
}

#[test]
fn coverage_rejects_bad_input() {
    let spec = paper_mixture();
    assert!(matches!(mode_coverage(&column(&[1.0]), &spec, 0.0), Err(Error::Contract(_))));
    assert!(matches!(mode_coverage(&column(&[1.0]), &spec, 1.0), Err(Error::Contract(_))));
    let wide = Tensor::from_rows(&[vec![1.0, 2.0]]);
    assert!(matches!(mode_coverage(&wide, &spec, 0.1), Err(Error::Dimension { .. })));
}

#[test]
fn coverage_against_empirical_reference() {
    let spec = paper_mixture();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real: Tensor<f64> = sample(&spec, 4000, &mut rng).unwrap();
    let fake: Tensor<f64> = sample(&spec, 4000, &mut rng).unwrap();
    let rx = first_coordinate(&real);
    let (lo, hi) = default_range(&rx).unwrap();
    let reference = Histogram::new(&rx, DEFAULT_BINS, lo, hi).unwrap();
    let r = mode_coverage_against(&fake, &spec, DEFAULT_TAU, &reference).unwrap();
    let (hr, hf) = paired_histograms(&rx, &first_coordinate(&fake)).unwrap();
    assert_eq!(r.jsd, js_divergence(&hr, &hf).unwrap());
    assert_eq!(r.modes_captured, 5);
}

#[test]
fn report_text_lists_every_mode() {
    let spec = paper_mixture();
    let r = mode_coverage(&column(&[10.0, 20.0]), &spec, 0.1).unwrap();
    let text = r.to_text();
    assert!(text.starts_with("modes_captured: 2\n"));
    assert!(text.contains("mode_4_captured: false\n"));
    assert_eq!(text.lines().count(), 3 + 2 * 5);
}

proptest! {
    #[test]
    fn histogram_conserves_samples(xs in prop::collection::vec(-20.0f64..20.0, 1..200), bins in 1usize..30) {
        let h = Histogram::new(&xs, bins, -10.0, 10.0).unwrap();
        prop_assert_eq!(h.counts().iter().sum::<u64>() + h.out_of_range(), xs.len() as u64);
    }

    #[test]
    fn jsd_symmetric_and_bounded(
        a in prop::collection::vec(0u64..50, 6),
        b in prop::collection::vec(0u64..50, 6),
        extra_a in 0u64..20,
        extra_b in 0u64..20,
    ) {
        let edges: Vec<f64> = (0..=6).map(|i| i as f64).collect();
        let ta = a.iter().sum::<u64>() + extra_a;
        let tb = b.iter().sum::<u64>() + extra_b;
        prop_assume!(ta > 0 && tb > 0);
        let ha = Histogram::from_parts(edges.clone(), a, ta).unwrap();
        let hb = Histogram::from_parts(edges, b, tb).unwrap();
        let d1 = js_divergence(&ha, &hb).unwrap();
        let d2 = js_divergence(&hb, &ha).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&d1));
    }

    #[test]
    fn raising_tau_never_adds_modes(xs in prop::collection::vec(0.0f64..120.0, 1..100), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let spec = paper_mixture();
        let s = column(&xs);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = mode_coverage(&s, &spec, lo).unwrap();
        let b = mode_coverage(&s, &spec, hi).unwrap();
        prop_assert!(b.modes_captured <= a.modes_captured);
        prop_assert!(a.modes_captured <= spec.components().len());
        prop_assert!(a.modes.iter().all(|m| (0.0..=1.0).contains(&m.mass_fraction)));
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a.jsd));
    }
}
