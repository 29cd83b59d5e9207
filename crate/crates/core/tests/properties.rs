mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use uqdepth::autodiff::{Array, Graph};
use uqdepth::losses::{gnll_loss, lc_loss, si_loss, LossConfig};
use uqdepth::metrics::{self, Log10Mode, ThresholdRule};
use uqdepth::uq::{aggregate, SampleSet};

#[test]
fn random_graphs_pass_grad_check() {
    let mut r = rng(2024);
    for i in 0..100 {
        let (err, ops) = random_graph_error(&mut r);
        assert!(err < 1e-4, "graph {i} ({}) error {err:e}", ops.join(" > "));
    }
}

#[test]
fn flips_are_involutions() {
    let mut r = rng(5);
    let x = uniform(&mut r, &[2, 3, 5, 7], -2.0, 2.0);
    assert_eq!(x.flip_h().unwrap().flip_h().unwrap(), x);
    assert_eq!(x.flip_v().unwrap().flip_v().unwrap(), x);
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(99);
    for case in 0..100 {
        let (pred, gt, u, valid) = random_triple(&mut r, 8, 8);
        let m = mask(&valid, 8, 8);
        let want = depth_oracle(pred.data(), gt.data(), &valid);
        let mae = metrics::depth_metrics(&pred, &gt, &m, Log10Mode::Mae).unwrap();
        let rms = metrics::depth_metrics(&pred, &gt, &m, Log10Mode::Rmse).unwrap();
        let got = [mae.rmse, mae.absrel, mae.log10, rms.log10, mae.delta1, mae.delta2, mae.delta3];
        let exp = [want.rmse, want.absrel, want.log10_mae, want.log10_rmse, want.delta[0], want.delta[1], want.delta[2]];
        for (g, e) in got.iter().zip(exp) {
            assert!(close(*g, e), "case {case}: {got:?} vs {exp:?}");
        }

        let acc = metrics::delta_map(&pred, &gt, &m, 1).unwrap();
        let acc_oracle: Vec<bool> = (0..64).map(|i| (pred.data()[i] / gt.data()[i]).max(gt.data()[i] / pred.data()[i]) < 1.25).collect();
        let counts = uncertainty_oracle(&acc_oracle, u.data(), &valid);
        let um = metrics::uncertainty_metrics(&acc, &u, &m, ThresholdRule::Median).unwrap();
        let c = um.counts;
        assert_eq!([c.n_ac, c.n_au, c.n_ic, c.n_iu], counts, "case {case}");
        let [a, b, p] = ratios(counts);
        for (g, e) in [(um.p_acc_cer, a), (um.p_unc_ina, b), (um.pavpu, p)] {
            assert_eq!(g.is_some(), e.is_some());
            if let (Some(g), Some(e)) = (g, e) {
                assert!(close(g, e));
            }
        }
    }
}

#[test]
fn delta_is_monotone_in_k() {
    let mut r = rng(3);
    for _ in 0..50 {
        let (pred, gt, _, valid) = random_triple(&mut r, 8, 8);
        let d = metrics::depth_metrics(&pred, &gt, &mask(&valid, 8, 8), Log10Mode::Mae).unwrap();
        assert!(d.delta1 <= d.delta2 && d.delta2 <= d.delta3);
    }
}

#[test]
fn median_threshold_splits_evenly() {
    let mut r = rng(17);
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let (pred, gt, u, valid) = random_triple(&mut r, h, w);
        let m = mask(&valid, h, w);
        let acc = metrics::delta_map(&pred, &gt, &m, 1).unwrap();
        let c = metrics::uncertainty_counts(&acc, &u, &m, ThresholdRule::Median).unwrap();
        let certain = c.n_ac + c.n_ic;
        let uncertain = c.n_au + c.n_iu;
        assert!(certain.abs_diff(uncertain) <= 1, "{certain} vs {uncertain}");
    }
}

#[test]
fn loss_identities() {
    let cfg = LossConfig::default();
    let mut r = rng(8);
    for _ in 0..50 {
        let (h, w) = (r.random_range(2..9), r.random_range(2..9));
        let (y, target, _, valid) = random_triple(&mut r, h, w);
        let m = mask(&valid, h, w);

        let mut g = Graph::new();
        let t = g.leaf(target.clone(), false);
        let si = si_loss(&mut g, t, &target, &m, &cfg).unwrap();
        assert!(g.value(si).item().abs() <= 1e-12);

        let mut g = Graph::new();
        let mu = g.leaf(target.clone(), false);
        let one = g.leaf(Array::full(&[h, w], 1.0), false);
        let nll = gnll_loss(&mut g, mu, one, &target, &m, &cfg).unwrap();
        assert!(g.value(nll).item().abs() <= 1e-12);

        let mut g = Graph::new();
        let yn = g.leaf(y.clone(), false);
        let c = g.leaf(Array::full(&[h, w], 1.0), false);
        let lc = lc_loss(&mut g, yn, c, &target, &m, &cfg).unwrap();
        let idx: Vec<usize> = (0..h * w).filter(|&i| valid[i]).collect();
        let want = idx
            .iter()
            .map(|&i| (1.0 - cfg.lambda) * (y.data()[i].ln() - target.data()[i].ln()).powi(2))
            .sum::<f64>()
            / idx.len() as f64;
        assert!((g.value(lc).item() - want).abs() <= 1e-12);
    }
}

#[test]
fn aggregation_matches_two_pass() {
    let mut r = rng(41);
    for _ in 0..1000 {
        let t = r.random_range(2..12);
        let n = r.random_range(1..20);
        let raw: Vec<Vec<f64>> = (0..t).map(|_| (0..n).map(|_| r.random_range(0.1..10.0)).collect()).collect();
        let set = SampleSet::new(raw.iter().map(|s| Array::new(vec![n], s.clone()).unwrap()).collect()).unwrap();
        let (mean, var) = aggregate(&set).unwrap();
        let (em, ev) = two_pass(&raw);
        for i in 0..n {
            assert!(close(mean.data()[i], em[i]) && close(var.data()[i], ev[i]));
        }
        let mut shuffled = raw.clone();
        shuffled.shuffle(&mut r);
        let set2 = SampleSet::new(shuffled.into_iter().map(|s| Array::new(vec![n], s).unwrap()).collect()).unwrap();
        let (m2, v2) = aggregate(&set2).unwrap();
        for i in 0..n {
            assert!(close(m2.data()[i], mean.data()[i]) && close(v2.data()[i], var.data()[i]));
        }
    }
}

proptest! {
    #[test]
    fn identical_samples_have_zero_variance(v in prop::collection::vec(-1e3f64..1e3, 1..16), t in 2usize..12) {
        let a = Array::new(vec![v.len()], v.clone()).unwrap();
        let (mean, var) = aggregate(&SampleSet::new(vec![a; t]).unwrap()).unwrap();
        prop_assert_eq!(mean.data(), &v[..]);
        prop_assert!(var.data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn depth_metrics_scale_correctly(seed in any::<u64>(), s in 0.1f64..20.0) {
        let mut r = rng(seed);
        let (pred, gt, _, valid) = random_triple(&mut r, 6, 6);
        let m = mask(&valid, 6, 6);
        let a = metrics::depth_metrics(&pred, &gt, &m, Log10Mode::Mae).unwrap();
        let b = metrics::depth_metrics(&pred.map(|v| v * s), &gt.map(|v| v * s), &m, Log10Mode::Mae).unwrap();
        prop_assert!((b.rmse - s * a.rmse).abs() <= 1e-9 * s * a.rmse.max(1.0));
        prop_assert!((b.absrel - a.absrel).abs() <= 1e-12);
        prop_assert!((b.log10 - a.log10).abs() <= 1e-12);
        prop_assert_eq!((b.delta1, b.delta2, b.delta3), (a.delta1, a.delta2, a.delta3));
    }
}
