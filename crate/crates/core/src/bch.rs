//! Integral-form Baker–Campbell–Hausdorff evaluation and the two
//! quantitative log-product estimates as checkable certificates.
//!
//! For `|X|, |Y|` small,
//! `log(e^X e^Y) = X + (∫₀¹ g(e^{ad_X} e^{s ad_Y}) ds) Y` with
//! `g(z) = z log z / (z − 1)`. Operators act on `𝔰(d,ℝ)` in the shared
//! orthonormal basis, so all norms are Frobenius-induced.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lie_core::{
    ad_operator_in, exp_matrix, log_matrix, matfn, power_iteration_norm, random_in_basis, random_on_sphere,
    shared_basis, AlgebraVector, LinearOperator,
};
use crate::quadrature::gauss_legendre_unit;

/// Operating radius (Frobenius) of the integral formula.
pub const R_BCH: f64 = 0.2;
pub const DEFAULT_QUAD_NODES: usize = 16;
/// Certificates pass when `lhs ≤ rhs + PASS_SLACK`.
pub const PASS_SLACK: f64 = 1e-12;
const NORM_ITERATIONS: usize = 30;
const NORM_TOL: f64 = 1e-12;

/// Truncation policy for the operator series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesBudget {
    pub max_order: usize,
    pub tolerance: f64,
}

impl Default for SeriesBudget {
    fn default() -> Self {
        SeriesBudget { max_order: 60, tolerance: 1e-14 }
    }
}

/// Where a series was cut and what the remainder is bounded by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesTail {
    pub order: usize,
    /// `q` for the g-series, `‖ad_X‖` for the f-series.
    pub contraction: f64,
    pub tail_bound: f64,
}

/// `q^{M+1} / ((M+1)(M+2)(1−q))`
pub fn g_tail_bound(q: f64, order: usize) -> f64 {
    let m = order as f64;
    q.powi(order as i32 + 1) / ((m + 1.0) * (m + 2.0) * (1.0 - q))
}

/// `a^{M+1} e^a / (M+2)!`
pub fn f_tail_bound(a: f64, order: usize) -> f64 {
    let mut t = a.exp();
    for k in 1..=order + 1 {
        t *= a / (k as f64 + 1.0);
    }
    t
}

fn g_order(q: f64, budget: SeriesBudget) -> SeriesTail {
    let mut m = 1;
    while m < budget.max_order && g_tail_bound(q, m) >= budget.tolerance {
        m += 1;
    }
    SeriesTail { order: m, contraction: q, tail_bound: g_tail_bound(q, m) }
}

fn f_order(a: f64, budget: SeriesBudget) -> SeriesTail {
    let mut m = 0;
    while m < budget.max_order && f_tail_bound(a, m) >= budget.tolerance {
        m += 1;
    }
    SeriesTail { order: m, contraction: a, tail_bound: f_tail_bound(a, m) }
}

/// A truncated operator series with its tail certificate.
#[derive(Debug, Clone)]
pub struct SeriesOperator {
    pub operator: LinearOperator,
    pub tail: SeriesTail,
}

/// `f(ad_X) = (I − e^{−ad_X}) / ad_X = Σ (−1)^m/(m+1)! ad_X^m`.
pub fn f_operator(x: &AlgebraVector, budget: SeriesBudget) -> Result<SeriesOperator> {
    let basis = shared_basis(x.dim())?;
    let ad = ad_operator_in(&basis, x);
    let a = power_iteration_norm(ad.matrix(), NORM_ITERATIONS, NORM_TOL);
    let tail = f_order(a, budget);
    let n = basis.len();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for m in 1..=tail.order {
        term = &term * ad.matrix() * (-1.0 / (m as f64 + 1.0));
        sum += &term;
    }
    Ok(SeriesOperator { operator: LinearOperator::new(basis, sum)?, tail })
}

fn contraction_matrix(exp_ad_x: &DMatrix<f64>, ad_y: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    let n = ad_y.nrows();
    Ok(exp_ad_x * matfn::expm(&(ad_y * s))? - DMatrix::<f64>::identity(n, n))
}

fn check_contraction(q: f64) -> Result<()> {
    if q >= 1.0 || !q.is_finite() {
        return Err(Error::out_of_domain(
            "g_operator",
            format!("contraction violated: ‖e^(ad_X) e^(s ad_Y) − I‖ = {q:.6} ≥ 1"),
        ));
    }
    Ok(())
}

/// `g(e^{ad_X} e^{s ad_Y})` with `g(z) = 1 + Σ (−1)^{m+1}/(m(m+1)) (z−1)^m`.
pub fn g_operator(x: &AlgebraVector, y: &AlgebraVector, s: f64, budget: SeriesBudget) -> Result<SeriesOperator> {
    if x.dim() != y.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("s = {s} outside [0, 1]")));
    }
    let basis = shared_basis(x.dim())?;
    let ad_x = ad_operator_in(&basis, x);
    let ad_y = ad_operator_in(&basis, y);
    let t = contraction_matrix(&matfn::expm(ad_x.matrix())?, ad_y.matrix(), s)?;
    let q = power_iteration_norm(&t, NORM_ITERATIONS, NORM_TOL);
    check_contraction(q)?;
    let tail = g_order(q, budget);
    let n = basis.len();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for m in 1..=tail.order {
        power = &power * &t;
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        sum += &power * (sign / (m * (m + 1)) as f64);
    }
    Ok(SeriesOperator { operator: LinearOperator::new(basis, sum)?, tail })
}

fn check_radius(op: &'static str, x: &AlgebraVector, y: &AlgebraVector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let limit = R_BCH * (1.0 + 1e-12);
    for (name, v) in [("X", x), ("Y", y)] {
        if v.norm() > limit {
            return Err(Error::out_of_domain(op, format!("|{name}| = {:.6} exceeds r_bch = {R_BCH}", v.norm())));
        }
    }
    Ok(())
}

/// Gauss–Legendre evaluation of the integral formula at `t = 1`.
pub fn bch_log(x: &AlgebraVector, y: &AlgebraVector, quad_nodes: usize, budget: SeriesBudget) -> Result<AlgebraVector> {
    check_radius("bch_log", x, y)?;
    if quad_nodes == 0 {
        return Err(Error::invalid("quad_nodes must be positive"));
    }
    let basis = shared_basis(x.dim())?;
    let ad_x = ad_operator_in(&basis, x);
    let ad_y = ad_operator_in(&basis, y);
    let exp_ad_x = matfn::expm(ad_x.matrix())?;
    let yc = basis.coordinates(y);
    let (nodes, weights) = gauss_legendre_unit(quad_nodes);
    let mut integral = DVector::<f64>::zeros(basis.len());
    for (s, w) in nodes.iter().zip(&weights) {
        let t = contraction_matrix(&exp_ad_x, ad_y.matrix(), *s)?;
        let q = power_iteration_norm(&t, NORM_ITERATIONS, NORM_TOL);
        check_contraction(q)?;
        let tail = g_order(q, budget);
        let mut v = yc.clone();
        let mut acc = yc.clone();
        for m in 1..=tail.order {
            v = &t * v;
            let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
            acc += &v * (sign / (m * (m + 1)) as f64);
        }
        integral += acc * *w;
    }
    Ok(x.add(&basis.from_coordinates(&integral)))
}

/// `Σ_{m≥1} (√2−1)^{m−1} / (m(m+1))`, summed until the increment is below `1e-16`.
pub fn c_series_sum() -> f64 {
    let r = std::f64::consts::SQRT_2 - 1.0;
    let mut sum = 0.0;
    let mut pow = 1.0;
    let mut m = 1.0;
    loop {
        let inc = pow / (m * (m + 1.0));
        sum += inc;
        if inc < 1e-16 {
            return sum;
        }
        pow *= r;
        m += 1.0;
    }
}

/// `C = (e^{‖ad_X‖} − 1)·S`.
pub fn c_constant(ad_norm: f64) -> f64 {
    ad_norm.exp_m1() * c_series_sum()
}

/// Measured deviation against a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub pass: bool,
}

impl BoundCertificate {
    pub fn new(lhs: f64, rhs: f64, constant: f64) -> Self {
        BoundCertificate { lhs, rhs, constant, pass: lhs <= rhs + PASS_SLACK }
    }

    /// Associative merge keeping the worst case.
    pub fn merge(self, other: BoundCertificate) -> BoundCertificate {
        let pick = if other.lhs - other.rhs > self.lhs - self.rhs { other } else { self };
        BoundCertificate { pass: self.pass && other.pass, ..pick }
    }
}

/// `‖ad_X‖` by power iteration.
pub fn ad_norm(x: &AlgebraVector) -> Result<f64> {
    let basis = shared_basis(x.dim())?;
    Ok(power_iteration_norm(ad_operator_in(&basis, x).matrix(), NORM_ITERATIONS, NORM_TOL))
}

/// `|log(e^X e^Y) − X − Y| ≤ C_X |Y|`.
pub fn verify_log_product(x: &AlgebraVector, y: &AlgebraVector) -> Result<BoundCertificate> {
    check_radius("verify_log_product", x, y)?;
    let z = log_matrix(&exp_matrix(x)?.mul(&exp_matrix(y)?))?;
    let lhs = z.sub(x).sub(y).norm();
    let c = c_constant(ad_norm(x)?);
    Ok(BoundCertificate::new(lhs, c * y.norm(), c))
}

/// `|log(e^X e^{−Y})| ≤ C |X − Y|`.
pub fn verify_lipschitz(x: &AlgebraVector, y: &AlgebraVector, c: f64) -> Result<BoundCertificate> {
    check_radius("verify_lipschitz", x, y)?;
    let lhs = log_matrix(&exp_matrix(x)?.mul(&exp_matrix(&y.scale(-1.0))?))?.norm();
    Ok(BoundCertificate::new(lhs, c * x.sub(y).norm(), c))
}

/// One reproducible pair from the ball of radius `radius`.
pub fn sample_pair(d: usize, radius: f64, seed: u64) -> Result<(AlgebraVector, AlgebraVector)> {
    let basis = shared_basis(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_in_basis(&basis, radius, &mut rng);
    let y = random_in_basis(&basis, radius, &mut rng);
    Ok((x, y))
}

/// Largest observed `|log(e^X e^{−Y})| / |X − Y|`.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzEstimate {
    pub dim: usize,
    pub radius: f64,
    pub samples: usize,
    pub constant: f64,
}

/// Empirical Lipschitz constant over uniform pairs and close pairs.
pub fn empirical_lipschitz<R: Rng + ?Sized>(d: usize, radius: f64, samples: usize, rng: &mut R) -> Result<LipschitzEstimate> {
    let basis = shared_basis(d)?;
    let mut best: f64 = 0.0;
    for i in 0..samples {
        let x = random_in_basis(&basis, radius, rng);
        let y = if i % 2 == 0 {
            random_in_basis(&basis, radius, rng)
        } else {
            // local ratio near the diagonal
            let dir = random_on_sphere(&basis, 1e-3 * radius, rng);
            let cand = x.add(&dir);
            if cand.norm() > radius { x.sub(&dir) } else { cand }
        };
        let diff = x.sub(&y).norm();
        if diff == 0.0 || y.norm() > radius {
            continue;
        }
        let lhs = log_matrix(&exp_matrix(&x)?.mul(&exp_matrix(&y.scale(-1.0))?))?.norm();
        best = best.max(lhs / diff);
    }
    Ok(LipschitzEstimate { dim: d, radius, samples, constant: best })
}

/// Start-up check of the operating radius.
#[derive(Debug, Clone, Serialize)]
pub struct RadiusReport {
    pub dim: usize,
    pub radius: f64,
    pub samples: usize,
    /// max `‖e^{ad_X} e^{s ad_Y} − I‖` over the boundary sample
    pub max_contraction: f64,
    pub sqrt2_threshold: f64,
    /// strict `≤ √2 − 1` condition
    pub within_sqrt2: bool,
    /// `q < 1`: the g-series converges
    pub series_converges: bool,
    /// largest radius (by bisection on the same directions) meeting `√2 − 1`
    pub sqrt2_radius: f64,
}

fn max_contraction_on(dirs: &[(AlgebraVector, AlgebraVector, f64)], scale: f64) -> Result<f64> {
    let d = dirs[0].0.dim();
    let basis = shared_basis(d)?;
    let mut worst: f64 = 0.0;
    for (x, y, s) in dirs {
        let ax = ad_operator_in(&basis, &x.scale(scale));
        let ay = ad_operator_in(&basis, &y.scale(scale));
        let t = contraction_matrix(&matfn::expm(ax.matrix())?, ay.matrix(), *s)?;
        worst = worst.max(power_iteration_norm(&t, NORM_ITERATIONS, NORM_TOL));
    }
    Ok(worst)
}

/// Samples `|X| = |Y| = radius` and `s ∈ [0, 1]` (half at `s = 1`).
pub fn validate_bch_radius<R: Rng + ?Sized>(d: usize, radius: f64, samples: usize, rng: &mut R) -> Result<RadiusReport> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let basis = shared_basis(d)?;
    let dirs: Vec<_> = (0..samples)
        .map(|i| {
            let x = random_on_sphere(&basis, 1.0, rng);
            let y = random_on_sphere(&basis, 1.0, rng);
            let s = if i % 2 == 0 { 1.0 } else { rng.random::<f64>() };
            (x, y, s)
        })
        .collect();
    let q = max_contraction_on(&dirs, radius)?;
    let threshold = std::f64::consts::SQRT_2 - 1.0;
    let (mut lo, mut hi) = (0.0, radius);
    if q > threshold {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if max_contraction_on(&dirs, mid)? <= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    } else {
        lo = radius;
    }
    Ok(RadiusReport {
        dim: d,
        radius,
        samples,
        max_contraction: q,
        sqrt2_threshold: threshold,
        within_sqrt2: q <= threshold,
        series_converges: q < 1.0,
        sqrt2_radius: lo,
    })
}
