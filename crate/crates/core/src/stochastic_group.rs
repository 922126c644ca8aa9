//! The stochastic group `S(d,ℝ)` (invertible matrices with unit row sums),
//! its algebra `𝔰(d,ℝ)` (zero row sums), the positive cone of generators,
//! and the two-state reference model with jump generators `A` and `B`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::IncrementDistribution;
use crate::lie_core::{exp_matrix, AlgebraVector, GroupElement, MEMBERSHIP_TOL, SINGULARITY_TOL};

/// Off-diagonal slack for the (closed) positive cone.
pub const CONE_TOL: f64 = 1e-12;

/// Largest absolute row-sum deviation from `target`.
pub fn row_sum_residual(m: &DMatrix<f64>, target: f64) -> f64 {
    m.row_iter()
        .map(|r| (r.sum() - target).abs())
        .fold(0.0, f64::max)
}

/// Outcome of a group-membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    pub row_sum_residual: f64,
    pub determinant: f64,
}

/// Checks `M·𝟙 = 𝟙` within `tol` and `|det M| > SINGULARITY_TOL`.
pub fn is_group_member(m: &DMatrix<f64>, tol: f64) -> Result<MembershipReport> {
    if !m.is_square() {
        return Err(Error::invalid(format!("group membership needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let residual = row_sum_residual(m, 1.0);
    let det = m.determinant();
    Ok(MembershipReport {
        member: residual <= tol && det.abs() > SINGULARITY_TOL,
        row_sum_residual: residual,
        determinant: det,
    })
}

/// Algebra membership: `A·𝟙 = 0` within `tol`.
pub fn is_algebra_member(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && row_sum_residual(m, 0.0) <= tol
}

/// Zero row sums and non-negative off-diagonal entries (up to [`CONE_TOL`]).
pub fn is_positive_cone(a: &AlgebraVector) -> bool {
    let m = a.matrix();
    let d = m.nrows();
    (0..d).all(|i| (0..d).all(|j| i == j || m[(i, j)] >= -CONE_TOL))
}

/// Shift certificate for `exp(A) ∈ S₊(d,ℝ)`.
#[derive(Debug, Clone)]
pub struct ConeCertificate {
    /// `k = max_i |A_ii|`
    pub shift: f64,
    pub exp_a: DMatrix<f64>,
    /// `exp(A + kI)`, entrywise non-negative
    pub exp_shifted: DMatrix<f64>,
    /// `max |exp(A) − e^{−k} exp(A + kI)|`
    pub identity_residual: f64,
    pub min_shifted_entry: f64,
}

impl ConeCertificate {
    pub fn holds(&self) -> bool {
        self.identity_residual <= 1e-10 * self.exp_a.amax().max(1.0) && self.min_shifted_entry >= 0.0
    }
}

/// Verifies `exp(A) = e^{−k} exp(A + kI)` with `exp(A + kI) ≥ 0`.
pub fn exp_cone_certificate(a: &AlgebraVector) -> Result<ConeCertificate> {
    if !is_positive_cone(a) {
        return Err(Error::invalid("exp_cone_certificate: generator has a negative off-diagonal entry"));
    }
    let m = a.matrix();
    let d = m.nrows();
    let shift = (0..d).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let shifted = m + DMatrix::<f64>::identity(d, d) * shift;
    let exp_shifted = crate::lie_core::matfn::expm(&shifted)?;
    let exp_a = exp_matrix(a)?.into_matrix();
    let residual = (&exp_a - &exp_shifted * (-shift).exp()).amax();
    let min_entry = exp_shifted.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConeCertificate {
        shift,
        exp_a,
        exp_shifted,
        identity_residual: residual,
        min_shifted_entry: min_entry,
    })
}

/// `A = [[−α, α], [0, 0]]`
pub fn generator_a(alpha: f64) -> AlgebraVector {
    AlgebraVector::from_raw(DMatrix::from_row_slice(2, 2, &[-alpha, alpha, 0.0, 0.0]))
}

/// `B = [[0, 0], [β, −β]]`
pub fn generator_b(beta: f64) -> AlgebraVector {
    AlgebraVector::from_raw(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, beta, -beta]))
}

/// `exp(tA) = [[e^{−tα}, 1 − e^{−tα}], [0, 1]]`
pub fn exp_a_closed_form(alpha: f64, t: f64) -> DMatrix<f64> {
    let e = (-t * alpha).exp();
    DMatrix::from_row_slice(2, 2, &[e, -(-t * alpha).exp_m1(), 0.0, 1.0])
}

/// `exp(tB) = [[1, 0], [1 − e^{−tβ}, e^{−tβ}]]`
pub fn exp_b_closed_form(beta: f64, t: f64) -> DMatrix<f64> {
    let e = (-t * beta).exp();
    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -(-t * beta).exp_m1(), e])
}

/// Two-state model: increments `A` or `B` with probability ½ each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleModel {
    pub alpha: f64,
    pub beta: f64,
}

impl ExampleModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("example model needs alpha, beta > 0 (got {alpha}, {beta})")));
        }
        let model = ExampleModel { alpha, beta };
        // the stored closed forms double as an exp oracle; refuse to build if they disagree
        for t in [1.0, 0.1] {
            let (a, b) = (model.step_a(t), model.step_b(t));
            let ea = exp_matrix(&generator_a(alpha).scale(t))?;
            let eb = exp_matrix(&generator_b(beta).scale(t))?;
            let err = (ea.matrix() - a.matrix()).amax().max((eb.matrix() - b.matrix()).amax());
            if err > 1e-10 {
                return Err(Error::NonConvergence {
                    operation: "example_model",
                    iterations: 0,
                    detail: format!("closed-form step disagrees with exp_matrix by {err:e}"),
                });
            }
        }
        Ok(model)
    }

    pub fn a(&self) -> AlgebraVector {
        generator_a(self.alpha)
    }

    pub fn b(&self) -> AlgebraVector {
        generator_b(self.beta)
    }

    pub fn weights(&self) -> [f64; 2] {
        [0.5, 0.5]
    }

    /// `exp(tA)` from the closed form.
    pub fn step_a(&self, t: f64) -> GroupElement {
        GroupElement::from_raw(exp_a_closed_form(self.alpha, t))
    }

    pub fn step_b(&self, t: f64) -> GroupElement {
        GroupElement::from_raw(exp_b_closed_form(self.beta, t))
    }

    /// One rescaled step `exp(A/n)`.
    pub fn one_step_a(&self, n: usize) -> GroupElement {
        self.step_a(1.0 / n as f64)
    }

    pub fn one_step_b(&self, n: usize) -> GroupElement {
        self.step_b(1.0 / n as f64)
    }

    pub fn distribution(&self) -> IncrementDistribution {
        IncrementDistribution::new(vec![(0.5, self.a()), (0.5, self.b())])
            .expect("two atoms with weight one half")
    }

    /// `𝔼X₁ = (A + B)/2`
    pub fn mean(&self) -> AlgebraVector {
        self.a().add(&self.b()).scale(0.5)
    }

    /// Algebra element `[[−x₁, x₁], [x₂, −x₂]]`.
    pub fn algebra_point(x1: f64, x2: f64) -> AlgebraVector {
        AlgebraVector::from_raw(DMatrix::from_row_slice(2, 2, &[-x1, x1, x2, -x2]))
    }
}

/// Group membership check used on the model's reachable matrices.
pub fn is_member(g: &GroupElement) -> bool {
    is_group_member(g.matrix(), MEMBERSHIP_TOL).map(|r| r.member).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_core::random_algebra_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_is_member() {
        let r = is_group_member(&DMatrix::identity(3, 3), MEMBERSHIP_TOL).unwrap();
        assert!(r.member);
    }

    #[test]
    fn closed_form_step_is_member() {
        assert!(is_group_member(&exp_a_closed_form(1.0, 1.0), MEMBERSHIP_TOL).unwrap().member);
    }

    #[test]
    fn rank_one_matrix_is_not_member() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let r = is_group_member(&m, MEMBERSHIP_TOL).unwrap();
        assert!(!r.member);
        assert!(r.row_sum_residual < 1e-15);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(is_group_member(&DMatrix::zeros(2, 3), 1e-9).is_err());
    }

    #[test]
    fn cone_sign_checks() {
        assert!(is_positive_cone(&generator_a(0.7)));
        assert!(is_positive_cone(&AlgebraVector::zeros(2)));
        let pos = AlgebraVector::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
        let neg = AlgebraVector::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
        assert!(is_positive_cone(&pos));
        assert!(!is_positive_cone(&neg));
    }

    #[test]
    fn cone_certificate_zero_and_vertex() {
        let c = exp_cone_certificate(&AlgebraVector::zeros(2)).unwrap();
        assert_eq!(c.shift, 0.0);
        assert!((c.exp_a - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        let c = exp_cone_certificate(&generator_a(2.0)).unwrap();
        assert_eq!(c.shift, 2.0);
        assert!(c.holds());
    }

    #[test]
    fn cone_certificate_rejects_negative_rate() {
        let neg = AlgebraVector::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0])).unwrap();
        assert!(exp_cone_certificate(&neg).is_err());
    }

    fn random_cone(d: usize, max_norm: f64, rng: &mut impl Rng) -> AlgebraVector {
        let mut m = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    m[(i, j)] = rng.random::<f64>();
                }
            }
            let s: f64 = m.row(i).sum();
            m[(i, i)] = -s;
        }
        let a = AlgebraVector::from_raw(m);
        let scale = rng.random::<f64>() * max_norm / a.norm();
        a.scale(scale)
    }

    #[test]
    fn cone_exponentials_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2, 3, 4] {
            for _ in 0..1000 {
                let a = random_cone(d, 3.0, &mut rng);
                let e = exp_matrix(&a).unwrap().into_matrix();
                assert!(e.min() >= -1e-12);
                assert!(row_sum_residual(&e, 1.0) < 1e-10);
            }
        }
        let a = random_cone(4, 3.0, &mut rng);
        let c = exp_cone_certificate(&a).unwrap();
        assert!(c.holds());
        assert!(row_sum_residual(&c.exp_a, 1.0) < 1e-9);
    }

    #[test]
    fn example_model_steps_match_formula() {
        let m = ExampleModel::new(1.3, 0.4).unwrap();
        let n = 7;
        let ea = m.one_step_a(n).into_matrix();
        let e = (-1.3f64 / 7.0).exp();
        assert!((ea[(0, 0)] - e).abs() < 1e-15 && (ea[(0, 1)] - (1.0 - e)).abs() < 1e-15);
        let eb = m.one_step_b(n).into_matrix();
        let e = (-0.4f64 / 7.0).exp();
        assert!((eb[(1, 1)] - e).abs() < 1e-15 && (eb[(1, 0)] - (1.0 - e)).abs() < 1e-15);
        let far = m.one_step_a(1_000_000).into_matrix();
        assert!((far - DMatrix::<f64>::identity(2, 2)).amax() < 1e-5);
    }

    #[test]
    fn example_model_rejects_bad_parameters() {
        assert!(ExampleModel::new(0.0, 1.0).is_err());
        assert!(ExampleModel::new(1.0, -2.0).is_err());
    }

    #[test]
    fn products_of_steps_stay_in_group() {
        let m = ExampleModel::new(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GroupElement::identity(2);
        for _ in 0..500 {
            let s = if rng.random::<bool>() { m.one_step_a(100) } else { m.one_step_b(100) };
            p = p.mul(&s);
            assert!(is_member(&p));
        }
    }

    #[test]
    fn random_algebra_vectors_are_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..=5 {
            let x = random_algebra_vector(d, 1.0, &mut rng);
            assert!(is_algebra_member(x.matrix(), 1e-12));
        }
    }
}
