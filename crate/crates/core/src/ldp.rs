//! Log moment generating function `Λ` and its Legendre transform `Λ*` for
//! finitely supported increment laws on `𝔰(d,ℝ)`.
//!
//! `Λ*` is finite exactly on the convex hull of the support. The transform
//! is evaluated in coordinates of the support's affine hull: orthogonal
//! to it the objective `⟨λ,x⟩ − Λ(λ)` is linear, so `Λ*(x) = ∞` unless
//! `x` lies in the hull. Inside the relative interior a damped Newton
//! iteration finds the maximizer; on a proper face `F` the supremum is
//! the face's own transform minus `log 𝑃(X ∈ F)` and is not attained.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie_core::AlgebraVector;

/// Tolerance of the domain classification.
pub const DOMAIN_TOL: f64 = 1e-9;
/// Newton stops once `|∇| <` this.
pub const OPTIMIZER_TOL: f64 = 1e-11;
/// Iterates beyond this norm are taken as escaping to infinity.
pub const DIVERGENCE_NORM: f64 = 1e6;
const NEWTON_MAX_ITER: usize = 500;

/// Finitely supported probability law on the algebra.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<Atom>", into = "Vec<Atom>")]
pub struct IncrementDistribution {
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub vector: AlgebraVector,
}

impl TryFrom<Vec<Atom>> for IncrementDistribution {
    type Error = Error;
    fn try_from(atoms: Vec<Atom>) -> Result<Self> {
        IncrementDistribution::new(atoms.into_iter().map(|a| (a.weight, a.vector)).collect())
    }
}

impl From<IncrementDistribution> for Vec<Atom> {
    fn from(d: IncrementDistribution) -> Self {
        d.atoms
    }
}

impl IncrementDistribution {
    /// Weights must be positive and sum to one within `1e-12`.
    pub fn new(atoms: Vec<(f64, AlgebraVector)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("distribution needs at least one atom"));
        }
        let d = atoms[0].1.dim();
        if atoms.iter().any(|(_, v)| v.dim() != d) {
            return Err(Error::invalid("atoms have mixed dimensions"));
        }
        if let Some((w, _)) = atoms.iter().find(|(w, _)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("atom weight {w} is not positive")));
        }
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(IncrementDistribution {
            atoms: atoms.into_iter().map(|(weight, vector)| Atom { weight, vector }).collect(),
        })
    }

    pub fn point_mass(x: AlgebraVector) -> Self {
        IncrementDistribution { atoms: vec![Atom { weight: 1.0, vector: x }] }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].vector.dim()
    }

    pub fn mean(&self) -> AlgebraVector {
        let d = self.dim();
        self.atoms
            .iter()
            .fold(AlgebraVector::zeros(d), |acc, a| acc.add(&a.vector.scale(a.weight)))
    }

    /// `B = max |X|` over the support.
    pub fn support_bound(&self) -> f64 {
        self.atoms.iter().map(|a| a.vector.norm()).fold(0.0, f64::max)
    }

    /// Atom weights reweighted by `e^{⟨λ,X⟩ − Λ(λ)}`.
    pub fn tilted(&self, lambda: &AlgebraVector) -> IncrementDistribution {
        let lmgf = log_mgf(self, lambda);
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { weight: a.weight * (lambda.inner(&a.vector) - lmgf).exp(), vector: a.vector.clone() })
            .collect();
        IncrementDistribution { atoms }
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `Λ(λ) = log Σ w_i e^{⟨λ, X_i⟩}` with a max shift.
pub fn log_mgf(dist: &IncrementDistribution, lambda: &AlgebraVector) -> f64 {
    log_sum_exp(dist.atoms.iter().map(|a| a.weight.ln() + lambda.inner(&a.vector)))
}

/// Where a point sits relative to the convex hull of the support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Inside,
    Boundary,
    Outside,
}

/// Value of `Λ*(x)` with the maximizer and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct LegendreResult {
    /// `+∞` outside the effective domain.
    pub value: f64,
    pub domain: Domain,
    /// `λ*` when the supremum is attained (relative interior).
    pub maximizer: Option<AlgebraVector>,
    /// On a proper face: the face problem's maximizer, a finite stand-in
    /// for the (infinite) boundary subgradient.
    pub face_maximizer: Option<AlgebraVector>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl LegendreResult {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    fn infinite() -> Self {
        LegendreResult {
            value: f64::INFINITY,
            domain: Domain::Outside,
            maximizer: None,
            face_maximizer: None,
            gradient_norm: f64::NAN,
            iterations: 0,
        }
    }

    /// Slope used by gradient-based callers: `λ*` or the face stand-in.
    pub fn slope(&self) -> Option<&AlgebraVector> {
        self.maximizer.as_ref().or(self.face_maximizer.as_ref())
    }
}

fn flatten(x: &AlgebraVector) -> DVector<f64> {
    DVector::from_column_slice(x.matrix().as_slice())
}

fn unflatten(v: &DVector<f64>, d: usize) -> AlgebraVector {
    AlgebraVector::project(&DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Affine-hull coordinates of a support: `x = base + V y`.
#[derive(Debug, Clone)]
struct HullChart {
    d: usize,
    base: DVector<f64>,
    dirs: DMatrix<f64>,
    points: Vec<DVector<f64>>,
    log_weights: Vec<f64>,
    scale: f64,
}

impl HullChart {
    fn new(dist: &IncrementDistribution) -> Self {
        let d = dist.dim();
        let base = flatten(&dist.mean());
        let n = dist.len();
        let diffs = DMatrix::from_fn(d * d, n, |r, c| flatten(&dist.atoms[c].vector)[r] - base[r]);
        let scale = dist.support_bound().max(1.0);
        let dirs = if diffs.amax() == 0.0 {
            DMatrix::zeros(d * d, 0)
        } else {
            let svd = diffs.clone().svd(true, false);
            let u = svd.u.expect("left singular vectors requested");
            let smax = svd.singular_values.max();
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1.0))
                .collect();
            DMatrix::from_fn(d * d, keep.len(), |r, c| u[(r, keep[c])])
        };
        let points = (0..n).map(|c| dirs.tr_mul(&diffs.column(c))).collect();
        let log_weights = dist.atoms.iter().map(|a| a.weight.ln()).collect();
        HullChart { d, base, dirs, points, log_weights, scale }
    }

    fn rank(&self) -> usize {
        self.dirs.ncols()
    }

    /// Chart coordinates and the distance from the affine hull.
    fn coordinates(&self, x: &AlgebraVector) -> (DVector<f64>, f64) {
        let rel = flatten(x) - &self.base;
        let y = self.dirs.tr_mul(&rel);
        let perp = (&rel - &self.dirs * &y).norm();
        (y, perp)
    }

    fn ambient(&self, lambda: &DVector<f64>) -> AlgebraVector {
        unflatten(&(&self.dirs * lambda), self.d)
    }

    fn classify(&self, y: &DVector<f64>) -> Result<(Domain, Vec<usize>)> {
        let k = self.rank();
        let n = self.points.len();
        let tol = DOMAIN_TOL * self.scale;
        if k == 0 {
            return Ok((Domain::Inside, (0..n).collect()));
        }
        if k == 1 {
            let (lo, hi) = self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
            let v = y[0];
            if v < lo - tol || v > hi + tol {
                return Ok((Domain::Outside, vec![]));
            }
            let on_face = |target: f64| (0..n).filter(|&j| (self.points[j][0] - target).abs() <= tol).collect::<Vec<_>>();
            if (v - lo).abs() <= tol {
                return Ok((Domain::Boundary, on_face(lo)));
            }
            if (v - hi).abs() <= tol {
                return Ok((Domain::Boundary, on_face(hi)));
            }
            return Ok((Domain::Inside, (0..n).collect()));
        }
        classify_lp(&self.points, y, tol)
    }
}

/// Builds the feasibility LP `Σ q_j b_j + s⁺ − s⁻ = y`, `Σ q_j = 1`.
fn hull_lp(
    points: &[DVector<f64>],
    y: &DVector<f64>,
    objective: impl Fn(usize) -> f64,
    slack_cost: f64,
    direction: OptimizationDirection,
) -> (Problem, Vec<minilp::Variable>, Vec<minilp::Variable>) {
    let k = y.len();
    let mut p = Problem::new(direction);
    let q: Vec<_> = (0..points.len()).map(|j| p.add_var(objective(j), (0.0, f64::INFINITY))).collect();
    let slack: Vec<_> = (0..2 * k).map(|_| p.add_var(slack_cost, (0.0, f64::INFINITY))).collect();
    for i in 0..k {
        let mut row: Vec<(minilp::Variable, f64)> = q.iter().enumerate().map(|(j, v)| (*v, points[j][i])).collect();
        row.push((slack[2 * i], 1.0));
        row.push((slack[2 * i + 1], -1.0));
        p.add_constraint(row, ComparisonOp::Eq, y[i]);
    }
    p.add_constraint(q.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    (p, q, slack)
}

fn lp_err(e: minilp::Error) -> Error {
    Error::NonConvergence { operation: "domain_check", iterations: 0, detail: format!("linear program failed: {e}") }
}

fn classify_lp(points: &[DVector<f64>], y: &DVector<f64>, tol: f64) -> Result<(Domain, Vec<usize>)> {
    let n = points.len();
    let k = y.len();
    // L1 distance from y to the hull
    let (p, _, _) = hull_lp(points, y, |_| 0.0, 1.0, OptimizationDirection::Minimize);
    let dist = p.solve().map_err(lp_err)?.objective();
    if dist > tol {
        return Ok((Domain::Outside, vec![]));
    }
    // atoms that can carry weight in some representation span the minimal face
    let mut face = Vec::new();
    for j in 0..n {
        let (mut p, _, slack) = hull_lp(points, y, |i| if i == j { 1.0 } else { 0.0 }, 0.0, OptimizationDirection::Maximize);
        p.add_constraint(slack.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Le, dist + tol);
        let best = p.solve().map_err(lp_err)?.objective();
        if best > tol {
            face.push(j);
        }
    }
    let first = &points[face[0]];
    let diffs = DMatrix::from_fn(k, face.len(), |r, c| points[face[c]][r] - first[r]);
    let rank = if face.len() > 1 { diffs.rank(1e-9) } else { 0 };
    if rank == k {
        Ok((Domain::Inside, face))
    } else {
        Ok((Domain::Boundary, face))
    }
}

struct NewtonOutcome {
    value: f64,
    lambda: DVector<f64>,
    gradient_norm: f64,
    iterations: usize,
}

fn objective(points: &[DVector<f64>], logw: &[f64], y: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    lambda.dot(y) - log_sum_exp(points.iter().zip(logw).map(|(p, w)| w + lambda.dot(p)))
}

/// Damped Newton ascent of `⟨λ,y⟩ − log Σ w_j e^{⟨λ,b_j⟩}` in chart coordinates.
fn newton(points: &[DVector<f64>], logw: &[f64], y: &DVector<f64>, start: Option<&DVector<f64>>) -> Result<Option<NewtonOutcome>> {
    let k = y.len();
    let mut lambda = start.cloned().unwrap_or_else(|| DVector::zeros(k));
    let mut phi = objective(points, logw, y, &lambda);
    let mut grad_norm = f64::INFINITY;
    for it in 0..NEWTON_MAX_ITER {
        let scores: Vec<f64> = points.iter().zip(logw).map(|(p, w)| w + lambda.dot(p)).collect();
        let lse = log_sum_exp(scores.iter().copied());
        let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
        let mean = points.iter().zip(&probs).fold(DVector::zeros(k), |acc, (p, w)| acc + p * *w);
        let grad = y - &mean;
        grad_norm = grad.norm();
        if grad_norm < OPTIMIZER_TOL {
            return Ok(Some(NewtonOutcome { value: phi, lambda, gradient_norm: grad_norm, iterations: it }));
        }
        let mut cov = DMatrix::<f64>::zeros(k, k);
        for (p, w) in points.iter().zip(&probs) {
            let c = p - &mean;
            cov += &c * c.transpose() * *w;
        }
        let step = match cov.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = 1e-14 * cov.trace().max(1e-300);
                match (cov + DMatrix::identity(k, k) * ridge).cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let slope = grad.dot(&step);
        if grad_norm < 1e-8 && step.norm() < 1e-13 * (1.0 + lambda.norm()) {
            // Newton step below working precision
            return Ok(Some(NewtonOutcome { value: phi, lambda, gradient_norm: grad_norm, iterations: it }));
        }
        let mut t = 1.0;
        let mut accepted = false;
        if grad_norm < 1e-6 {
            // quadratic regime: objective differences are below rounding
            lambda += &step;
            phi = objective(points, logw, y, &lambda);
            continue;
        }
        for _ in 0..60 {
            let cand = &lambda + &step * t;
            let val = objective(points, logw, y, &cand);
            if val.is_finite() && val >= phi + 1e-4 * t * slope {
                lambda = cand;
                phi = val;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if lambda.norm() > DIVERGENCE_NORM {
            return Ok(None);
        }
        if !accepted {
            // no ascent available at working precision
            if grad_norm < 1e3 * OPTIMIZER_TOL {
                return Ok(Some(NewtonOutcome { value: phi, lambda, gradient_norm: grad_norm, iterations: it }));
            }
            break;
        }
    }
    Err(Error::NonConvergence {
        operation: "legendre",
        iterations: NEWTON_MAX_ITER,
        detail: format!("gradient norm {grad_norm:e} at λ = {:?}", lambda.as_slice()),
    })
}

/// Reusable `Λ*` evaluator for one distribution.
#[derive(Debug, Clone)]
pub struct Conjugate {
    dist: IncrementDistribution,
    chart: HullChart,
}

impl Conjugate {
    pub fn new(dist: &IncrementDistribution) -> Self {
        Conjugate { dist: dist.clone(), chart: HullChart::new(dist) }
    }

    pub fn distribution(&self) -> &IncrementDistribution {
        &self.dist
    }

    /// Dimension of the support's affine hull.
    pub fn hull_rank(&self) -> usize {
        self.chart.rank()
    }

    /// Orthonormal directions of the affine hull, as algebra elements.
    pub fn hull_directions(&self) -> Vec<AlgebraVector> {
        (0..self.chart.rank())
            .map(|c| unflatten(&self.chart.dirs.column(c).into_owned(), self.chart.d))
            .collect()
    }

    pub fn domain(&self, x: &AlgebraVector) -> Result<Domain> {
        if x.dim() != self.dist.dim() {
            return Err(Error::invalid("dimension mismatch between point and distribution"));
        }
        let (y, perp) = self.chart.coordinates(x);
        if perp > DOMAIN_TOL * self.chart.scale {
            return Ok(Domain::Outside);
        }
        Ok(self.chart.classify(&y)?.0)
    }

    pub fn eval(&self, x: &AlgebraVector) -> Result<LegendreResult> {
        self.eval_from(x, None)
    }

    /// Like [`eval`](Self::eval) with a warm start for the Newton iteration
    /// (an ambient `λ`, projected onto the hull directions).
    pub fn eval_from(&self, x: &AlgebraVector, warm: Option<&AlgebraVector>) -> Result<LegendreResult> {
        if x.dim() != self.dist.dim() {
            return Err(Error::invalid("dimension mismatch between point and distribution"));
        }
        let (y, perp) = self.chart.coordinates(x);
        if perp > DOMAIN_TOL * self.chart.scale {
            return Ok(LegendreResult::infinite());
        }
        let (domain, face) = self.chart.classify(&y)?;
        match domain {
            Domain::Outside => Ok(LegendreResult::infinite()),
            Domain::Inside => {
                if self.chart.rank() == 0 {
                    return Ok(LegendreResult {
                        value: 0.0,
                        domain,
                        maximizer: Some(AlgebraVector::zeros(self.dist.dim())),
                        face_maximizer: None,
                        gradient_norm: 0.0,
                        iterations: 0,
                    });
                }
                let start = warm.map(|w| self.chart.dirs.tr_mul(&flatten(w)));
                let out = match newton(&self.chart.points, &self.chart.log_weights, &y, start.as_ref())? {
                    Some(o) => o,
                    None => return Ok(LegendreResult::infinite()),
                };
                Ok(LegendreResult {
                    value: out.value.max(0.0),
                    domain,
                    maximizer: Some(self.chart.ambient(&out.lambda)),
                    face_maximizer: None,
                    gradient_norm: out.gradient_norm,
                    iterations: out.iterations,
                })
            }
            Domain::Boundary => {
                let mass: f64 = face.iter().map(|&j| self.dist.atoms[j].weight).sum();
                let atoms = face
                    .iter()
                    .map(|&j| (self.dist.atoms[j].weight / mass, self.dist.atoms[j].vector.clone()))
                    .collect::<Vec<_>>();
                let face_dist = IncrementDistribution { atoms: atoms.into_iter().map(|(weight, vector)| Atom { weight, vector }).collect() };
                let inner = Conjugate::new(&face_dist).eval(x)?;
                if !inner.is_finite() {
                    return Ok(LegendreResult::infinite());
                }
                Ok(LegendreResult {
                    value: inner.value - mass.ln(),
                    domain,
                    maximizer: None,
                    face_maximizer: inner.slope().cloned(),
                    gradient_norm: inner.gradient_norm,
                    iterations: inner.iterations,
                })
            }
        }
    }
}

/// `Λ*(x) = sup_λ ⟨λ, x⟩ − Λ(λ)`.
pub fn legendre(dist: &IncrementDistribution, x: &AlgebraVector) -> Result<LegendreResult> {
    Conjugate::new(dist).eval(x)
}

/// Inside / boundary / outside of the convex hull of the support.
pub fn domain_check(dist: &IncrementDistribution, x: &AlgebraVector) -> Result<Domain> {
    Conjugate::new(dist).domain(x)
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Closed form of `Λ*` for the two-atom model at `[[−x₁, x₁], [x₂, −x₂]]`.
///
/// Finite only on the segment `βx₁ + αx₂ = αβ`, `x₁ ∈ [0, α]`,
/// `x₂ ∈ [0, β]`; uses `0·log 0 = 0` at the endpoints (value `log 2`).
pub fn legendre_closed_form_s2(x1: f64, x2: f64, alpha: f64, beta: f64) -> f64 {
    let tol = DOMAIN_TOL;
    if x1 < -tol || x1 > alpha + tol || x2 < -tol || x2 > beta + tol {
        return f64::INFINITY;
    }
    if (beta * x1 + alpha * x2 - alpha * beta).abs() > tol {
        return f64::INFINITY;
    }
    let (x1, x2) = (x1.clamp(0.0, alpha), x2.clamp(0.0, beta));
    let v = xlogy(x1, beta * x1) / alpha + xlogy(x2, alpha * x2) / beta - (0.5 * alpha * beta).ln();
    v.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic_group::ExampleModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(x1: f64, x2: f64) -> AlgebraVector {
        ExampleModel::algebra_point(x1, x2)
    }

    /// Independent oracle: Λ* on the segment is the relative entropy of
    /// the unique mixing weight, KL((p, 1−p) ‖ (½, ½)).
    fn kl_oracle(p: f64) -> f64 {
        xlogy(p, 2.0 * p) + xlogy(1.0 - p, 2.0 * (1.0 - p))
    }

    #[test]
    fn distribution_validation() {
        let a = point(1.0, 0.0);
        assert!(IncrementDistribution::new(vec![]).is_err());
        assert!(IncrementDistribution::new(vec![(0.5, a.clone())]).is_err());
        assert!(IncrementDistribution::new(vec![(1.5, a.clone()), (-0.5, a.clone())]).is_err());
        assert!(IncrementDistribution::new(vec![(1.0, a.clone()), (0.0, a)]).is_err());
    }

    #[test]
    fn log_mgf_values() {
        let m = ExampleModel::new(1.3, 0.7).unwrap();
        let dist = m.distribution();
        assert_eq!(log_mgf(&dist, &AlgebraVector::zeros(2)), 0.0);
        let (l1, l2) = (0.4, -0.9);
        let lambda = ExampleModel::algebra_point(l1, l2);
        let expected = (0.5 * (2.0 * 1.3 * l1).exp() + 0.5 * (2.0 * 0.7 * l2).exp()).ln();
        assert!((log_mgf(&dist, &lambda) - expected).abs() < 1e-14);
        // max-shift keeps huge arguments finite
        assert!(log_mgf(&dist, &lambda.scale(1e4)).is_finite());
    }

    #[test]
    fn log_mgf_is_midpoint_convex() {
        let dist = ExampleModel::new(1.0, 2.0).unwrap().distribution();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let a = point(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let b = point(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mid = log_mgf(&dist, &a.add(&b).scale(0.5));
            assert!(mid <= 0.5 * log_mgf(&dist, &a) + 0.5 * log_mgf(&dist, &b) + 1e-12);
        }
    }

    #[test]
    fn legendre_at_mean_is_zero() {
        let m = ExampleModel::new(1.0, 1.0).unwrap();
        let r = legendre(&m.distribution(), &m.mean()).unwrap();
        assert_eq!(r.domain, Domain::Inside);
        assert!(r.value.abs() < 1e-12);
        assert!(r.maximizer.unwrap().norm() < 1e-10);
    }

    #[test]
    fn legendre_at_vertex_is_log_two() {
        for (alpha, beta) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.25)] {
            let m = ExampleModel::new(alpha, beta).unwrap();
            let r = legendre(&m.distribution(), &m.a()).unwrap();
            assert_eq!(r.domain, Domain::Boundary);
            assert!((r.value - 2f64.ln()).abs() < 1e-12);
            let r = legendre(&m.distribution(), &m.b()).unwrap();
            assert!((r.value - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_off_constraint_line_is_infinite() {
        let m = ExampleModel::new(1.0, 1.0).unwrap();
        let r = legendre(&m.distribution(), &point(0.3, 0.9)).unwrap();
        assert!(!r.is_finite());
        assert_eq!(r.domain, Domain::Outside);
        // on the line but beyond the segment
        let r = legendre(&m.distribution(), &point(1.5, -0.5)).unwrap();
        assert!(!r.is_finite());
    }

    #[test]
    fn closed_form_cases() {
        let ln2 = 2f64.ln();
        assert!((legendre_closed_form_s2(1.0, 0.0, 1.0, 1.0) - ln2).abs() < 1e-15);
        assert!((legendre_closed_form_s2(0.0, 2.0, 3.0, 2.0) - ln2).abs() < 1e-15);
        assert!(legendre_closed_form_s2(0.5, 0.5, 1.0, 1.0).abs() < 1e-15);
        assert!(legendre_closed_form_s2(1.5, 1.0, 3.0, 2.0).abs() < 1e-15);
        assert!(legendre_closed_form_s2(0.3, 0.9, 1.0, 1.0).is_infinite());
        assert!(legendre_closed_form_s2(1.2, -0.2, 1.0, 1.0).is_infinite());
    }

    #[test]
    fn closed_form_matches_entropy_oracle_and_optimizer() {
        let dist = ExampleModel::new(1.0, 1.0).unwrap().distribution();
        let cf = legendre_closed_form_s2(0.25, 0.75, 1.0, 1.0);
        assert!((cf - kl_oracle(0.25)).abs() < 1e-14);
        let num = legendre(&dist, &point(0.25, 0.75)).unwrap();
        assert!((num.value - cf).abs() < 1e-7);
    }

    #[test]
    fn closed_form_maximizer_formula() {
        // λ₁* = log(βx₁)/(2α), λ₂* = log(αx₂)/(2β) up to the null direction of Λ
        let (alpha, beta) = (2.0, 0.5);
        let m = ExampleModel::new(alpha, beta).unwrap();
        let dist = m.distribution();
        let p = 0.3;
        let (x1, x2) = (p * alpha, (1.0 - p) * beta);
        let r = legendre(&dist, &point(x1, x2)).unwrap();
        let formula = point((beta * x1).ln() / (2.0 * alpha), (alpha * x2).ln() / (2.0 * beta));
        let x = point(x1, x2);
        let fy = formula.inner(&x) - log_mgf(&dist, &formula);
        assert!((fy - r.value).abs() < 1e-10);
    }

    #[test]
    fn fenchel_young_and_stationarity() {
        let m = ExampleModel::new(1.0, 2.0).unwrap();
        let dist = m.distribution();
        let conj = Conjugate::new(&dist);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p: f64 = rng.random_range(0.01..0.99);
            let x = point(p, (1.0 - p) * 2.0);
            let r = conj.eval(&x).unwrap();
            let lam = r.maximizer.clone().unwrap();
            // equality at the maximizer
            assert!((lam.inner(&x) - log_mgf(&dist, &lam) - r.value).abs() < 1e-8);
            // ∇Λ(λ*) = x
            let tilted = dist.tilted(&lam);
            assert!(tilted.mean().sub(&x).norm() < 1e-8);
            for _ in 0..5 {
                let l = point(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                assert!(l.inner(&x) <= log_mgf(&dist, &l) + r.value + 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_is_convex_along_segment() {
        let dist = ExampleModel::new(1.0, 1.0).unwrap().distribution();
        let conj = Conjugate::new(&dist);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let va = conj.eval(&point(a, 1.0 - a)).unwrap().value;
            let vb = conj.eval(&point(b, 1.0 - b)).unwrap().value;
            let c = 0.5 * (a + b);
            let vm = conj.eval(&point(c, 1.0 - c)).unwrap().value;
            assert!(vm <= 0.5 * (va + vb) + 1e-9);
        }
    }

    #[test]
    fn domain_check_cases() {
        let m = ExampleModel::new(1.0, 1.0).unwrap();
        let dist = m.distribution();
        assert_eq!(domain_check(&dist, &m.a()).unwrap(), Domain::Boundary);
        assert_eq!(domain_check(&dist, &m.mean()).unwrap(), Domain::Inside);
        assert_eq!(domain_check(&dist, &point(0.3, 0.9)).unwrap(), Domain::Outside);

        let single = IncrementDistribution::point_mass(m.a());
        assert_eq!(domain_check(&single, &m.a()).unwrap(), Domain::Inside);
        assert_eq!(domain_check(&single, &m.b()).unwrap(), Domain::Outside);
        assert!(legendre(&single, &m.a()).unwrap().value.abs() < 1e-15);
    }

    fn three_state_dist() -> IncrementDistribution {
        // three affinely independent jump generators in 𝔰(3,ℝ) → 2-d hull
        let g = |i: usize, j: usize, rate: f64| {
            let mut m = DMatrix::<f64>::zeros(3, 3);
            m[(i, j)] = rate;
            m[(i, i)] = -rate;
            AlgebraVector::new(m).unwrap()
        };
        IncrementDistribution::new(vec![(0.2, g(0, 1, 1.0)), (0.3, g(1, 2, 2.0)), (0.5, g(2, 0, 0.5))]).unwrap()
    }

    #[test]
    fn lp_classification_in_two_dimensional_hull() {
        let dist = three_state_dist();
        let conj = Conjugate::new(&dist);
        assert_eq!(conj.hull_rank(), 2);
        let a: Vec<AlgebraVector> = dist.atoms().iter().map(|a| a.vector.clone()).collect();
        assert_eq!(conj.domain(&dist.mean()).unwrap(), Domain::Inside);
        assert_eq!(conj.domain(&a[0]).unwrap(), Domain::Boundary);
        let edge = a[0].add(&a[1]).scale(0.5);
        assert_eq!(conj.domain(&edge).unwrap(), Domain::Boundary);
        let outside = a[0].scale(1.5).sub(&a[1].scale(0.25)).sub(&a[2].scale(0.25));
        assert_eq!(conj.domain(&outside).unwrap(), Domain::Outside);

        // boundary value on an edge = relative entropy of the edge mixture
        let r = conj.eval(&edge).unwrap();
        let (w0, w1) = (0.2f64, 0.3f64);
        let oracle = 0.5 * (0.5 / w0).ln() + 0.5 * (0.5 / w1).ln();
        assert!((r.value - oracle).abs() < 1e-10, "{} vs {oracle}", r.value);
        // vertex: -log w
        assert!((conj.eval(&a[2]).unwrap().value + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn interior_value_matches_entropy_projection_oracle() {
        // with affinely independent atoms the mixing weights are unique,
        // so Λ*(x) = KL(q ‖ w) for the barycentric coordinates q of x
        let dist = three_state_dist();
        let a: Vec<AlgebraVector> = dist.atoms().iter().map(|a| a.vector.clone()).collect();
        let q = [0.5, 0.3, 0.2];
        let x = a[0].scale(q[0]).add(&a[1].scale(q[1])).add(&a[2].scale(q[2]));
        let w = [0.2, 0.3, 0.5];
        let oracle: f64 = q.iter().zip(w).map(|(q, w)| q * (q / w).ln()).sum();
        let r = legendre(&dist, &x).unwrap();
        assert!((r.value - oracle).abs() < 1e-10);
    }

    #[test]
    fn serde_round_trip_checks_weights() {
        let dist = ExampleModel::new(1.0, 2.0).unwrap().distribution();
        let s = serde_json::to_string(&dist).unwrap();
        let back: IncrementDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back.len(), 2);
        let bad = s.replacen("0.5", "0.25", 1);
        assert!(serde_json::from_str::<IncrementDistribution>(&bad).is_err());
    }
}
