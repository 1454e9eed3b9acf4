//! Property tests for the invariants of the predictors, metrics and bounds.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sdro::analysis::{finite_sanov_bound, smoothed_sanov_bound, SmoothingMetric};
use sdro::divergence::{builtin, catalogue};
use sdro::experiments::clopper_pearson;
use sdro::loss::{sandwich_factor, EventSet, LossOracle};
use sdro::measure::{f_divergence, lp_metric, wasserstein, DiscreteDistribution, TransportCost};
use sdro::oracle::SimplexGrid;
use sdro::predictor;

const TOL: f64 = 1e-8;
const DIVS: [&str; 5] = ["kl", "burg", "pearson-chi2", "total-variation", "squared-hellinger"];

fn table(values: Vec<f64>, shift: f64) -> LossOracle {
    let points: Vec<Vec<f64>> = (0..values.len()).map(|j| vec![j as f64]).collect();
    LossOracle::from_fn(move |_, xi| values[xi[0] as usize] + shift, EventSet::Points(points)).unwrap()
}

fn center(weights: &[f64]) -> DiscreteDistribution {
    let s: f64 = weights.iter().sum();
    let points = (0..weights.len()).map(|j| vec![j as f64]).collect();
    DiscreteDistribution::new(points, weights.iter().map(|w| w / s).collect()).unwrap()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=4).prop_flat_map(|n| (prop::collection::vec(0.0..10.0f64, n), prop::collection::vec(0.05..1.0f64, n)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn f_dro_nondecreasing_in_radius((values, w) in instance(), div in 0usize..5, r1 in 0.0..1.0f64, dr in 0.0..1.0f64) {
        let loss = table(values, 0.0);
        let p = center(&w);
        let spec = builtin(DIVS[div]).unwrap();
        let a = predictor::f_dro(&loss, 0.0, &p, &spec, r1, TOL).unwrap().value;
        let b = predictor::f_dro(&loss, 0.0, &p, &spec, r1 + dr, TOL).unwrap().value;
        prop_assert!(b >= a - 1e-6 * (1.0 + a.abs()), "{a} > {b}");
    }

    #[test]
    fn f_dro_between_saa_and_max((values, w) in instance(), div in 0usize..5, r in 0.0..2.0f64) {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let loss = table(values, 0.0);
        let p = center(&w);
        let spec = builtin(DIVS[div]).unwrap();
        let v = predictor::f_dro(&loss, 0.0, &p, &spec, r, TOL).unwrap().value;
        let saa = predictor::saa(&loss, 0.0, &p);
        prop_assert!(v >= saa - 1e-6 && v <= max + 1e-6, "saa {saa} value {v} max {max}");
    }

    #[test]
    fn f_dro_shift_equivariant((values, w) in instance(), div in 0usize..5, r in 0.01..1.0f64, c in -20.0..20.0f64) {
        let p = center(&w);
        let spec = builtin(DIVS[div]).unwrap();
        let a = predictor::f_dro(&table(values.clone(), 0.0), 0.0, &p, &spec, r, TOL).unwrap().value;
        let b = predictor::f_dro(&table(values, c), 0.0, &p, &spec, r, TOL).unwrap().value;
        prop_assert!((b - a - c).abs() <= 1e-5 * (1.0 + a.abs() + c.abs()), "{a} + {c} vs {b}");
    }

    #[test]
    fn ot_dro_sandwich_across_k((values, w) in instance(), frac in 0.05..1.0f64) {
        let loss = table(values, 0.0);
        let p = center(&w);
        let diam = loss.diameter();
        let eps = frac * diam;
        let cost = TransportCost::Euclidean;
        let v8 = predictor::ot_dro(&loss, 0.0, &p, &cost, eps, 8, TOL).unwrap().value;
        let v32 = predictor::ot_dro(&loss, 0.0, &p, &cost, eps, 32, TOL).unwrap().value;
        let f = sandwich_factor(eps, 8, diam);
        prop_assert!(v8 <= f * v32 + 1e-9 && v32 <= f * v8 + 1e-9, "K=8 {v8} K=32 {v32} factor {f}");
    }

    #[test]
    fn smoothed_nondecreasing_in_k((values, w) in instance(), r in 0.01..1.0f64, frac in 0.05..0.5f64) {
        let loss = table(values, 0.0);
        let p = center(&w);
        let spec = builtin("kl").unwrap();
        let eps = frac * loss.diameter();
        let cost = TransportCost::Euclidean;
        let a = predictor::smoothed_f_d(&loss, 0.0, &p, &spec, &cost, r, eps, 8, TOL).unwrap().value;
        let b = predictor::smoothed_f_d(&loss, 0.0, &p, &spec, &cost, r, eps, 16, TOL).unwrap().value;
        prop_assert!(b >= a - 1e-9, "K=8 {a} K=16 {b}");
    }

    #[test]
    fn divergences_nonnegative_and_zero_on_equal(w1 in prop::collection::vec(0.05..1.0f64, 3), w2 in prop::collection::vec(0.05..1.0f64, 3)) {
        let (p, q) = (center(&w1), center(&w2));
        for spec in catalogue() {
            let d = f_divergence(&spec, &p, &q);
            prop_assert!(d >= -1e-12, "{}: {d}", spec.name());
            prop_assert!(f_divergence(&spec, &p, &p).abs() <= 1e-12);
        }
    }

    #[test]
    fn metric_inequalities(w1 in prop::collection::vec(0.0..1.0f64, 4), w2 in prop::collection::vec(0.0..1.0f64, 4)) {
        prop_assume!(w1.iter().sum::<f64>() > 0.1 && w2.iter().sum::<f64>() > 0.1);
        let (p, q) = (center(&w1), center(&w2));
        let diam = 3.0;
        let w = wasserstein(&TransportCost::Euclidean, &p, &q).unwrap();
        let lp = lp_metric(&p, &q).unwrap();
        prop_assert!(lp * lp <= w + 1e-8, "lp² {} > W {w}", lp * lp);
        prop_assert!(w <= (diam + 1.0) * lp + 1e-8, "W {w} > (diam+1)·lp {}", (diam + 1.0) * lp);
        let back = wasserstein(&TransportCost::Euclidean, &q, &p).unwrap();
        assert_abs_diff_eq!(w, back, epsilon = 1e-9);
    }

    #[test]
    fn simplex_grid_points_are_distributions(atoms in 1usize..=4, steps in 1usize..=12) {
        let grid = SimplexGrid::new(atoms, 1.0 / steps as f64).unwrap();
        let mut count = 0usize;
        for q in grid.points() {
            prop_assert_eq!(q.len(), atoms);
            prop_assert!(q.iter().all(|&v| v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            count += 1;
        }
        prop_assert_eq!(count as f64, grid.cardinality());
    }

    #[test]
    fn sanov_bounds_nonincreasing_in_radius(n in 1usize..200, card in 1usize..6, r in 0.0..2.0f64, dr in 0.0..2.0f64) {
        let a = finite_sanov_bound(n, card, r).unwrap();
        let b = finite_sanov_bound(n, card, r + dr).unwrap();
        prop_assert!(b.value <= a.value + 1e-15);
        prop_assert!(a.clamped <= 1.0 && a.clamped <= a.value);
        let s1 = smoothed_sanov_bound(n, r, 0.1, 1.0, 1, SmoothingMetric::Wasserstein).unwrap();
        let s2 = smoothed_sanov_bound(n, r + dr, 0.1, 1.0, 1, SmoothingMetric::Wasserstein).unwrap();
        prop_assert!(s2.value <= s1.value + 1e-15);
    }

    #[test]
    fn clopper_pearson_covers_the_estimate(n in 1usize..500, frac in 0.0..=1.0f64) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = clopper_pearson(k, n, 0.95);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}
