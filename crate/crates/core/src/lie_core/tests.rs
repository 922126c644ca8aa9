use super::*;
use crate::stochastic_group::{exp_a_closed_form, generator_a, generator_b};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn taylor_oracle(x: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let d = x.nrows();
    let mut sum = DMatrix::<f64>::identity(d, d);
    let mut term = DMatrix::<f64>::identity(d, d);
    for k in 1..terms {
        term = &term * x / k as f64;
        sum += &term;
    }
    sum
}

#[test]
fn basis_dimensions() {
    assert_eq!(algebra_basis(2).unwrap().len(), 2);
    assert_eq!(algebra_basis(3).unwrap().len(), 6);
    assert!(matches!(algebra_basis(1), Err(Error::InvalidDimension { dim: 1, .. })));
}

#[test]
fn basis_gram_is_identity() {
    // independent classical Gram-Schmidt on the same spanning set
    let d = 2;
    let mut oracle: Vec<DMatrix<f64>> = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let mut v = DMatrix::<f64>::zeros(d, d);
                v[(i, j)] = 1.0;
                v[(i, i)] = -1.0;
                let proj: Vec<f64> = oracle.iter().map(|b| b.dot(&v)).collect();
                for (b, c) in oracle.iter().zip(proj) {
                    v -= b * c;
                }
                oracle.push(&v / v.norm());
            }
        }
    }
    let basis = Basis::new(d).unwrap();
    assert!((basis.gram() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    for (k, o) in oracle.iter().enumerate() {
        assert!((basis.element(k).matrix() - o).amax() < 1e-12);
    }
    for d in 3..=6 {
        let b = Basis::new(d).unwrap();
        assert_eq!(b.len(), d * d - d);
        assert!((b.gram() - DMatrix::<f64>::identity(b.len(), b.len())).amax() < 1e-12);
    }
}

#[test]
fn exp_of_zero_is_identity() {
    let e = exp_matrix(&AlgebraVector::zeros(3)).unwrap();
    assert_eq!(e.matrix(), &DMatrix::<f64>::identity(3, 3));
}

#[test]
fn exp_of_jump_generator_matches_closed_form() {
    for alpha in [0.5, 1.0, 2.0] {
        for t in [0.01, 0.1, 1.0] {
            let e = exp_matrix(&generator_a(alpha).scale(t)).unwrap();
            assert!((e.matrix() - exp_a_closed_form(alpha, t)).amax() < 1e-12);
        }
    }
}

#[test]
fn exp_matches_taylor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [2, 3, 4] {
        for _ in 0..200 {
            let x = random_algebra_vector(d, 1.0, &mut rng);
            let diff = (exp_matrix(&x).unwrap().matrix() - taylor_oracle(x.matrix(), 50)).amax();
            assert!(diff < 1e-12, "{diff}");
        }
    }
}

#[test]
fn exp_result_is_group_member() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_algebra_vector(4, 2.0, &mut rng);
    let g = exp_matrix(&x).unwrap();
    assert!(GroupElement::new(g.into_matrix()).is_ok());
}

#[test]
fn exp_rejects_non_finite() {
    let x = AlgebraVector::from_raw(DMatrix::from_row_slice(2, 2, &[f64::INFINITY, 0.0, 0.0, 0.0]));
    assert!(matches!(exp_matrix(&x), Err(Error::NonFinite(_))));
}

#[test]
fn log_of_identity_is_zero() {
    let l = log_matrix(&GroupElement::identity(3)).unwrap();
    assert!(l.norm() < 1e-15);
}

#[test]
fn log_of_closed_form_step() {
    let alpha = 0.5;
    let g = GroupElement::new(exp_a_closed_form(alpha, 1.0)).unwrap();
    let l = log_matrix(&g).unwrap();
    assert!((l.matrix() - generator_a(alpha).matrix()).amax() < 1e-12);
}

#[test]
fn log_exp_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let d = 2 + i % 3;
        let x = random_algebra_vector(d, 0.5, &mut rng);
        let back = log_matrix(&exp_matrix(&x).unwrap()).unwrap();
        assert!(back.sub(&x).norm() < 1e-10);
    }
}

#[test]
fn log_out_of_domain_for_negative_spectrum() {
    // row sums 1, eigenvalues 1 and -0.5
    let g = GroupElement::new(DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.75, 0.25])).unwrap();
    assert!(matches!(log_matrix(&g), Err(Error::OutOfDomain { .. })));
}

#[test]
fn injectivity_radius_validates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in 2..=6 {
        let rep = validate_injectivity(d, InjectivityRadius::default(), 200, &mut rng).unwrap();
        assert!(rep.valid, "{rep:?}");
    }
}

#[test]
fn log_near_identity_enforces_ball() {
    let g = GroupElement::new(exp_a_closed_form(2.0, 1.0)).unwrap();
    assert!(log_near_identity(&g, InjectivityRadius::default()).is_err());
}

#[test]
fn bracket_cases() {
    let x = generator_a(1.0);
    assert!(bracket(&x, &x).unwrap().norm() == 0.0);

    // direct arithmetic: A = [[-1,1],[0,0]], B = [[0,0],[1,-1]]
    // AB = [[1,-1],[0,0]], BA = [[0,0],[-1,1]]
    let ab = bracket(&generator_a(1.0), &generator_b(1.0)).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
    assert_eq!(ab.matrix(), &expected);

    let y = generator_b(0.3);
    let lhs = bracket(&x.scale(2.0), &y).unwrap();
    let rhs = bracket(&x, &y).unwrap().scale(2.0);
    assert!(lhs.sub(&rhs).norm() < 1e-15);

    assert!(bracket(&AlgebraVector::zeros(2), &AlgebraVector::zeros(3)).is_err());
}

#[test]
fn ad_zero_and_homogeneity() {
    assert_eq!(ad_operator(&AlgebraVector::zeros(3)).unwrap().norm(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_algebra_vector(3, 1.0, &mut rng);
    let a = ad_operator(&x).unwrap().norm();
    let b = ad_operator(&x.scale(-2.5)).unwrap().norm();
    assert!((b - 2.5 * a).abs() < 1e-12);
}

#[test]
fn ad_matches_bracket_and_power_iteration_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for d in [2, 3, 4] {
        for _ in 0..50 {
            let x = random_algebra_vector(d, 1.0, &mut rng);
            let y = random_algebra_vector(d, 1.0, &mut rng);
            let ad = ad_operator(&x).unwrap();
            assert!(ad.apply(&y).sub(&bracket(&x, &y).unwrap()).norm() < 1e-12);
            let svd = ad.matrix().clone().svd(false, false).singular_values.max();
            assert!((ad.norm() - svd).abs() < 1e-10);
            let est = ad.norm_estimate();
            assert!((est - svd).abs() <= 1e-6 * svd.max(1e-300), "d={d} est={est} svd={svd}");
        }
    }
}

#[test]
fn ad_norm_is_linearly_bounded() {
    // κ_d = sup ‖ad_X‖/|X| measured once; every further sample obeys it
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 3, 4] {
        let basis = Arc::new(Basis::new(d).unwrap());
        let kappa = (0..2000)
            .map(|_| {
                let x = random_on_sphere(&basis, 1.0, &mut rng);
                ad_operator_in(&basis, &x).norm()
            })
            .fold(0.0, f64::max);
        // commutator bound ‖[X,Y]‖_F ≤ √2‖X‖‖Y‖
        assert!(kappa <= std::f64::consts::SQRT_2 + 1e-12);
        for _ in 0..200 {
            let x = random_in_basis(&basis, 3.0, &mut rng);
            assert!(ad_operator_in(&basis, &x).norm() <= kappa * x.norm() * 1.05 + 1e-12);
        }
    }
}

#[test]
fn conjugate_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = random_algebra_vector(3, 1.0, &mut rng);
    let same = conjugate(&GroupElement::identity(3), &y).unwrap();
    assert!(same.sub(&y).norm() < 1e-15);

    for _ in 0..100 {
        let x = random_algebra_vector(3, 0.3, &mut rng);
        let y = random_algebra_vector(3, 1.0, &mut rng);
        let lhs = conjugate(&exp_matrix(&x).unwrap(), &y).unwrap();
        let rhs = ad_operator(&x).unwrap().exp().unwrap().apply(&y);
        assert!(lhs.sub(&rhs).norm() < 1e-8);
    }
}

#[test]
fn conjugation_preserves_zero_row_sums_exactly_on_rationals() {
    // g = [[3/4, 1/4], [1/2, 1/2]], g⁻¹ = [[2, -1], [-2, 3]], X = [[-1, 1], [2, -2]]
    // all intermediate values are dyadic, so the float computation is exact
    let g = GroupElement::new(DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.5, 0.5])).unwrap();
    let x = AlgebraVector::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0])).unwrap();
    let c = conjugate(&g, &x).unwrap();
    for r in c.matrix().row_iter() {
        assert_eq!(r.sum(), 0.0);
    }
}

#[test]
fn conjugate_rejects_singular() {
    let g = GroupElement::from_raw(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
    assert!(matches!(conjugate(&g, &AlgebraVector::zeros(2)), Err(Error::Singular { .. })));
}

#[test]
fn distance_proxy_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = exp_matrix(&random_algebra_vector(3, 1.0, &mut rng)).unwrap();
    assert!(distance_proxy(&g, &g).unwrap() < 1e-14);

    let x = random_algebra_vector(3, 0.6, &mut rng);
    let d = distance_proxy(&GroupElement::identity(3), &exp_matrix(&x).unwrap()).unwrap();
    assert!((d - x.norm()).abs() < 1e-12);

    for _ in 0..100 {
        let f = exp_matrix(&random_algebra_vector(3, 1.0, &mut rng)).unwrap();
        let g = exp_matrix(&random_algebra_vector(3, 0.5, &mut rng)).unwrap();
        let h = exp_matrix(&random_algebra_vector(3, 0.5, &mut rng)).unwrap();
        let a = distance_proxy(&f.mul(&g), &f.mul(&h)).unwrap();
        let b = distance_proxy(&g, &h).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn serde_rejects_violations_with_residual() {
    let err = serde_json::from_str::<AlgebraVector>("[[1.0, 0.0], [0.0, 0.0]]").unwrap_err();
    assert!(err.to_string().contains("row sums equal 0"), "{err}");
    let err = serde_json::from_str::<GroupElement>("[[0.5, 0.5], [0.5, 0.5]]").unwrap_err();
    assert!(err.to_string().contains("singular"), "{err}");
    let err = serde_json::from_str::<GroupElement>("[[0.9, 0.0], [0.0, 1.0]]").unwrap_err();
    assert!(err.to_string().contains("row sums equal 1"), "{err}");
    let g: GroupElement = serde_json::from_str("[[0.75, 0.25], [0.5, 0.5]]").unwrap();
    assert_eq!(serde_json::to_string(&g).unwrap(), "[[0.75,0.25],[0.5,0.5]]");
}

proptest! {
    #[test]
    fn exp_neg_exp_is_identity(seed in any::<u64>(), d in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_algebra_vector(d, 2.0, &mut rng);
        let p = exp_matrix(&x.scale(-1.0)).unwrap().mul(&exp_matrix(&x).unwrap());
        prop_assert!((p.matrix() - DMatrix::<f64>::identity(d, d)).amax() < 1e-10);
    }

    #[test]
    fn brackets_stay_in_algebra(seed in any::<u64>(), d in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_algebra_vector(d, 1.0, &mut rng);
        let y = random_algebra_vector(d, 1.0, &mut rng);
        let b = bracket(&x, &y).unwrap();
        prop_assert!(row_sum_residual(b.matrix(), 0.0) < 1e-12);
    }

    #[test]
    fn jacobi_identity(seed in any::<u64>(), d in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_algebra_vector(d, 1.0, &mut rng);
        let y = random_algebra_vector(d, 1.0, &mut rng);
        let z = random_algebra_vector(d, 1.0, &mut rng);
        let j = bracket(&x, &bracket(&y, &z).unwrap()).unwrap()
            .add(&bracket(&y, &bracket(&z, &x).unwrap()).unwrap())
            .add(&bracket(&z, &bracket(&x, &y).unwrap()).unwrap());
        prop_assert!(j.norm() < 1e-10);
    }
}
