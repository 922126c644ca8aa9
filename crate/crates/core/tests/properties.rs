use lieldp::bch::verify_log_product;
use lieldp::ldp::{legendre, log_mgf, IncrementDistribution};
use lieldp::lie_core::{exp_matrix, log_matrix, AlgebraVector};
use lieldp::mc::{estimate_probability, wilson_interval, BallEvent};
use lieldp::rate::{constrained_endpoint_s2, jensen_check};
use lieldp::stochastic_group::ExampleModel;
use proptest::prelude::*;

fn algebra_point_2(x1: f64, x2: f64) -> AlgebraVector {
    ExampleModel::algebra_point(x1, x2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(x1 in -0.3f64..0.3, x2 in -0.3f64..0.3) {
        let x = algebra_point_2(x1, x2);
        let back = log_matrix(&exp_matrix(&x).unwrap()).unwrap();
        prop_assert!(back.sub(&x).norm() < 1e-13);
    }

    #[test]
    fn fenchel_young(alpha in 0.3f64..3.0, beta in 0.3f64..3.0, p in 0.0f64..1.0,
                     l1 in -3.0f64..3.0, l2 in -3.0f64..3.0) {
        let dist = ExampleModel::new(alpha, beta).unwrap().distribution();
        let x = algebra_point_2(p * alpha, (1.0 - p) * beta);
        let lam = algebra_point_2(l1, l2);
        let v = legendre(&dist, &x).unwrap().value;
        prop_assert!(v >= -1e-12);
        prop_assert!(lam.inner(&x) - log_mgf(&dist, &lam) <= v + 1e-9);
    }

    #[test]
    fn legendre_convex_along_segment(p in 0.02f64..0.98, q in 0.02f64..0.98, s in 0.0f64..1.0) {
        let dist = ExampleModel::new(1.0, 1.5).unwrap().distribution();
        let at = |r: f64| legendre(&dist, &algebra_point_2(r, (1.0 - r) * 1.5)).unwrap().value;
        let mid = s * p + (1.0 - s) * q;
        prop_assert!(at(mid) <= s * at(p) + (1.0 - s) * at(q) + 1e-10);
    }

    #[test]
    fn log_product_bound_holds(seed in 0u64..1_000_000) {
        let (x, y) = lieldp::bch::sample_pair(3, 0.2, seed).unwrap();
        prop_assert!(verify_log_product(&x, &y).unwrap().pass);
    }

    #[test]
    fn wilson_interval_brackets_frequency(hits in 0usize..500, extra in 0usize..500) {
        let samples = hits + extra + 1;
        let (lo, hi) = wilson_interval(hits, samples);
        let p = hits as f64 / samples as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn jensen_on_constant_paths(m12 in 0.05f64..0.58, m in 1usize..12) {
        let dist = ExampleModel::new(1.0, 1.0).unwrap().distribution();
        let path = lieldp::rate::optimal_path_s2(1.0, &constrained_endpoint_s2(1.0, m12).unwrap()).unwrap();
        prop_assert!(jensen_check(&dist, &path, m, 1e-9).unwrap().pass);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimates_are_seed_deterministic(seed in 0u64..1000, r in 0.03f64..0.2) {
        let m = ExampleModel::new(1.0, 1.0).unwrap();
        let ev = BallEvent::new(exp_matrix(&m.mean()).unwrap(), r).unwrap();
        let a = estimate_probability(&m.distribution(), 12, &ev, 500, seed).unwrap();
        let b = estimate_probability(&m.distribution(), 12, &ev, 500, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn point_mass_distribution_has_degenerate_conjugate() {
    let x = algebra_point_2(0.2, 0.1);
    let dist = IncrementDistribution::point_mass(x.clone());
    assert_eq!(legendre(&dist, &x).unwrap().value, 0.0);
    assert_eq!(legendre(&dist, &x.scale(1.1)).unwrap().value, f64::INFINITY);
}
