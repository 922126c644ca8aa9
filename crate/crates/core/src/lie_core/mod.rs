//! Matrix Lie group and algebra primitives for `S(d,ℝ)` / `𝔰(d,ℝ)`.
//!
//! Algebra elements carry the Frobenius inner product. Operators on the
//! algebra are represented in a fixed Frobenius-orthonormal basis
//! (see [`Basis`]), so operator norms are plain spectral norms.

pub mod matfn;

use std::fmt;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic_group::{row_sum_residual, is_group_member};

/// Absolute tolerance on the linear membership constraints.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// `|det|` must exceed this for a matrix to count as invertible.
pub const SINGULARITY_TOL: f64 = 1e-12;

/// Frobenius neighbourhood radii `(ε, r)`: `‖g − I‖_F ≤ ε` implies `|log g| ≤ r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityRadius {
    pub eps: f64,
    pub r: f64,
}

impl Default for InjectivityRadius {
    fn default() -> Self {
        InjectivityRadius { eps: 0.4, r: 0.7 }
    }
}

/// Element of `𝔰(d,ℝ)`: a real `d×d` matrix with zero row sums.
#[derive(Clone, PartialEq)]
pub struct AlgebraVector {
    m: DMatrix<f64>,
}

impl fmt::Debug for AlgebraVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AlgebraVector{:?}", rows(&self.m))
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::InvalidDimension { dim: 0, reason: "empty matrix" });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::invalid(format!("matrix is not square: row of length {} in a {d}-row matrix", bad.len())));
    }
    Ok(DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied()))
}

impl AlgebraVector {
    /// Validates squareness, finiteness and zero row sums.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!("algebra element must be square and non-empty, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("algebra element"));
        }
        let residual = row_sum_residual(&m, 0.0);
        if residual > MEMBERSHIP_TOL {
            return Err(Error::Membership { constraint: "row sums equal 0", residual });
        }
        Ok(AlgebraVector { m })
    }

    /// Orthogonal (Frobenius) projection onto the zero-row-sum subspace.
    pub fn project(m: &DMatrix<f64>) -> Self {
        let d = m.ncols() as f64;
        let mut out = m.clone();
        for mut row in out.row_iter_mut() {
            let mean = row.sum() / d;
            row.add_scalar_mut(-mean);
        }
        AlgebraVector { m: out }
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        AlgebraVector { m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(from_rows(rows)?)
    }

    pub fn zeros(d: usize) -> Self {
        AlgebraVector { m: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        rows(&self.m)
    }

    /// Frobenius norm `|X|`.
    pub fn norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn inner(&self, other: &AlgebraVector) -> f64 {
        self.m.dot(&other.m)
    }

    pub fn add(&self, other: &AlgebraVector) -> AlgebraVector {
        AlgebraVector { m: &self.m + &other.m }
    }

    pub fn sub(&self, other: &AlgebraVector) -> AlgebraVector {
        AlgebraVector { m: &self.m - &other.m }
    }

    pub fn scale(&self, c: f64) -> AlgebraVector {
        AlgebraVector { m: &self.m * c }
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().all(|v| *v == 0.0)
    }
}

impl Serialize for AlgebraVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AlgebraVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        AlgebraVector::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Element of `S(d,ℝ)`: invertible with unit row sums.
#[derive(Clone, PartialEq)]
pub struct GroupElement {
    m: DMatrix<f64>,
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement{:?}", rows(&self.m))
    }
}

impl GroupElement {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!("group element must be square and non-empty, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("group element"));
        }
        let report = is_group_member(&m, MEMBERSHIP_TOL)?;
        if report.row_sum_residual > MEMBERSHIP_TOL {
            return Err(Error::Membership { constraint: "row sums equal 1", residual: report.row_sum_residual });
        }
        if report.determinant.abs() <= SINGULARITY_TOL {
            return Err(Error::Singular { det: report.determinant });
        }
        Ok(GroupElement { m })
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        GroupElement { m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        GroupElement { m: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        rows(&self.m)
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        GroupElement { m: &self.m * &other.m }
    }

    pub fn inverse(&self) -> Result<GroupElement> {
        let det = self.m.determinant();
        self.m
            .clone()
            .try_inverse()
            .map(|m| GroupElement { m })
            .ok_or(Error::Singular { det })
    }

    /// `self⁻¹ · other` through an LU solve.
    pub fn left_divide(&self, other: &GroupElement) -> Result<GroupElement> {
        let det = self.m.determinant();
        if det.abs() <= SINGULARITY_TOL {
            return Err(Error::Singular { det });
        }
        self.m
            .clone()
            .lu()
            .solve(&other.m)
            .map(|m| GroupElement { m })
            .ok_or(Error::Singular { det })
    }
}

impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        GroupElement::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Frobenius-orthonormal basis of `𝔰(d,ℝ)`, obtained by Gram–Schmidt on
/// `{E_ij − E_ii : i ≠ j}` in row-major order.
#[derive(Debug, Clone)]
pub struct Basis {
    d: usize,
    elems: Vec<DMatrix<f64>>,
}

impl Basis {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension { dim: d, reason: "the stochastic algebra needs d >= 2" });
        }
        let mut elems: Vec<DMatrix<f64>> = Vec::with_capacity(d * d - d);
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let mut v = DMatrix::<f64>::zeros(d, d);
                v[(i, j)] = 1.0;
                v[(i, i)] = -1.0;
                // modified Gram-Schmidt, two passes
                for _ in 0..2 {
                    for b in &elems {
                        let c = b.dot(&v);
                        v -= b * c;
                    }
                }
                let n = v.norm();
                elems.push(v / n);
            }
        }
        Ok(Basis { d, elems })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `dim 𝔰(d,ℝ) = d² − d`
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn element(&self, k: usize) -> AlgebraVector {
        AlgebraVector::from_raw(self.elems[k].clone())
    }

    pub fn elements(&self) -> Vec<AlgebraVector> {
        self.elems.iter().cloned().map(AlgebraVector::from_raw).collect()
    }

    pub fn coordinates(&self, x: &AlgebraVector) -> DVector<f64> {
        DVector::from_iterator(self.elems.len(), self.elems.iter().map(|b| b.dot(x.matrix())))
    }

    pub fn from_coordinates(&self, c: &DVector<f64>) -> AlgebraVector {
        let mut m = DMatrix::<f64>::zeros(self.d, self.d);
        for (b, ck) in self.elems.iter().zip(c.iter()) {
            m += b * *ck;
        }
        AlgebraVector::from_raw(m)
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.elems.len();
        DMatrix::from_fn(n, n, |i, j| self.elems[i].dot(&self.elems[j]))
    }
}

/// Process-wide cached basis for dimension `d`.
pub fn shared_basis(d: usize) -> Result<Arc<Basis>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Basis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(b) = guard.get(&d) {
        return Ok(b.clone());
    }
    let b = Arc::new(Basis::new(d)?);
    guard.insert(d, b.clone());
    Ok(b)
}

/// Orthonormal basis of `𝔰(d,ℝ)`.
pub fn algebra_basis(d: usize) -> Result<Vec<AlgebraVector>> {
    Ok(Basis::new(d)?.elements())
}

/// A linear map on `𝔰(d,ℝ)` written in a [`Basis`].
#[derive(Debug, Clone)]
pub struct LinearOperator {
    basis: Arc<Basis>,
    matrix: DMatrix<f64>,
}

/// Spectral-norm estimate by power iteration on `MᵀM`, accelerated by
/// repeated squaring.
pub fn power_iteration_norm(m: &DMatrix<f64>, iterations: usize, tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 || m.amax() == 0.0 {
        return 0.0;
    }
    let mtm = m.transpose() * m;
    // repeated squaring of MᵀM: the k-th iterate is the 2^k-th power
    let mut p = &mtm / mtm.norm();
    for _ in 0..iterations {
        let sq = &p * &p;
        let next = &sq / sq.norm();
        let change = (&next - &p).norm();
        p = next;
        if change <= tol {
            break;
        }
    }
    // Rayleigh quotient on the dominant column of the projector-like limit
    let col = (0..n).max_by(|&a, &b| p.column(a).norm().total_cmp(&p.column(b).norm())).unwrap_or(0);
    let v = p.column(col).into_owned();
    let v = &v / v.norm();
    (v.dot(&(&mtm * &v))).max(0.0).sqrt()
}

impl LinearOperator {
    pub fn new(basis: Arc<Basis>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = basis.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::invalid(format!("operator must be {n}x{n} in this basis")));
        }
        Ok(LinearOperator { basis, matrix })
    }

    pub fn identity(basis: Arc<Basis>) -> Self {
        let n = basis.len();
        LinearOperator { basis, matrix: DMatrix::identity(n, n) }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &AlgebraVector) -> AlgebraVector {
        self.basis.from_coordinates(&(&self.matrix * self.basis.coordinates(x)))
    }

    pub fn compose(&self, other: &LinearOperator) -> LinearOperator {
        LinearOperator { basis: self.basis.clone(), matrix: &self.matrix * &other.matrix }
    }

    pub fn sub(&self, other: &LinearOperator) -> LinearOperator {
        LinearOperator { basis: self.basis.clone(), matrix: &self.matrix - &other.matrix }
    }

    pub fn scale(&self, c: f64) -> LinearOperator {
        LinearOperator { basis: self.basis.clone(), matrix: &self.matrix * c }
    }

    /// Operator exponential `e^{T}`.
    pub fn exp(&self) -> Result<LinearOperator> {
        Ok(LinearOperator { basis: self.basis.clone(), matrix: matfn::expm(&self.matrix)? })
    }

    /// Largest singular value (dense SVD).
    pub fn norm(&self) -> f64 {
        if self.matrix.is_empty() {
            return 0.0;
        }
        self.matrix.singular_values().max()
    }

    /// Power-iteration estimate of [`norm`](Self::norm): 30 iterations, tol 1e-12.
    pub fn norm_estimate(&self) -> f64 {
        power_iteration_norm(&self.matrix, 30, 1e-12)
    }
}

/// Matrix exponential as a map `𝔰(d,ℝ) → S(d,ℝ)`.
pub fn exp_matrix(x: &AlgebraVector) -> Result<GroupElement> {
    Ok(GroupElement::from_raw(matfn::expm(x.matrix())?))
}

/// Principal logarithm `S(d,ℝ) → 𝔰(d,ℝ)`.
///
/// Errors with out-of-domain when the inverse scaling-and-squaring scheme
/// cannot reach the identity (spectrum on the closed negative axis); the
/// caller is expected to subdivide its product in that case.
pub fn log_matrix(g: &GroupElement) -> Result<AlgebraVector> {
    let l = matfn::logm(g.matrix()).map_err(|e| match e {
        Error::OutOfDomain { detail, .. } => Error::out_of_domain("log_matrix", detail),
        other => other,
    })?;
    // row sums of the principal log vanish exactly in exact arithmetic
    Ok(AlgebraVector::project(&l))
}

/// Logarithm restricted to the Frobenius ball `‖g − I‖_F ≤ ε`.
pub fn log_near_identity(g: &GroupElement, radius: InjectivityRadius) -> Result<AlgebraVector> {
    let d = g.dim();
    let dist = (g.matrix() - DMatrix::<f64>::identity(d, d)).norm();
    if dist > radius.eps * (1.0 + 1e-12) {
        return Err(Error::out_of_domain(
            "log_near_identity",
            format!("‖g − I‖_F = {dist:.6} exceeds ε = {}", radius.eps),
        ));
    }
    log_matrix(g)
}

fn check_same_dim(x: &AlgebraVector, y: &AlgebraVector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", x.dim(), y.dim())));
    }
    Ok(())
}

/// Lie bracket `[X, Y] = XY − YX`.
pub fn bracket(x: &AlgebraVector, y: &AlgebraVector) -> Result<AlgebraVector> {
    check_same_dim(x, y)?;
    Ok(AlgebraVector::from_raw(x.matrix() * y.matrix() - y.matrix() * x.matrix()))
}

/// `ad_X = [X, ·]` in the given basis.
pub fn ad_operator_in(basis: &Arc<Basis>, x: &AlgebraVector) -> LinearOperator {
    let n = basis.len();
    let xm = x.matrix();
    let images: Vec<DMatrix<f64>> = basis
        .elems
        .iter()
        .map(|b| xm * b - b * xm)
        .collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| basis.elems[i].dot(&images[j]));
    LinearOperator { basis: basis.clone(), matrix }
}

/// `ad_X` in the standard basis of [`algebra_basis`].
pub fn ad_operator(x: &AlgebraVector) -> Result<LinearOperator> {
    Ok(ad_operator_in(&shared_basis(x.dim())?, x))
}

/// `Ad_g X = g X g⁻¹`.
pub fn conjugate(g: &GroupElement, x: &AlgebraVector) -> Result<AlgebraVector> {
    if g.dim() != x.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", g.dim(), x.dim())));
    }
    let inv = g.inverse()?;
    Ok(AlgebraVector::from_raw(g.matrix() * x.matrix() * inv.matrix()))
}

/// Left-invariant distance surrogate `|log(g⁻¹h)|`.
pub fn distance_proxy(g: &GroupElement, h: &GroupElement) -> Result<f64> {
    let rel = g.left_divide(h)?;
    Ok(log_matrix(&rel)?.norm())
}

/// Uniform sample from the Frobenius ball of radius `radius` in `𝔰(d,ℝ)`.
pub fn random_algebra_vector<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> AlgebraVector {
    let basis = shared_basis(d).expect("d >= 2");
    random_in_basis(&basis, radius, rng)
}

pub fn random_in_basis<R: Rng + ?Sized>(basis: &Basis, radius: f64, rng: &mut R) -> AlgebraVector {
    let n = basis.len();
    let mut c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = c.norm();
    if norm > 0.0 {
        c /= norm;
    }
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    basis.from_coordinates(&(c * r))
}

/// Uniform sample on the sphere `|X| = radius`.
pub fn random_on_sphere<R: Rng + ?Sized>(basis: &Basis, radius: f64, rng: &mut R) -> AlgebraVector {
    let n = basis.len();
    let c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = &c / c.norm();
    basis.from_coordinates(&(c * radius))
}

/// Outcome of the start-up round-trip validation of `(ε, r)`.
#[derive(Debug, Clone, Serialize)]
pub struct InjectivityReport {
    pub dim: usize,
    pub samples: usize,
    pub max_log_norm: f64,
    pub max_round_trip: f64,
    pub valid: bool,
}

/// Samples `g = I + E` with `E ∈ 𝔰(d,ℝ)`, `‖E‖_F ≤ ε`, and checks
/// `|log g| ≤ r` together with `exp(log g) = g`.
pub fn validate_injectivity<R: Rng + ?Sized>(
    d: usize,
    radius: InjectivityRadius,
    samples: usize,
    rng: &mut R,
) -> Result<InjectivityReport> {
    let basis = Basis::new(d)?;
    let mut max_log: f64 = 0.0;
    let mut max_rt: f64 = 0.0;
    for i in 0..samples {
        // half the samples on the boundary sphere
        let e = if i % 2 == 0 {
            random_on_sphere(&basis, radius.eps, rng)
        } else {
            random_in_basis(&basis, radius.eps, rng)
        };
        let g = GroupElement::from_raw(DMatrix::<f64>::identity(d, d) + e.matrix());
        let l = log_near_identity(&g, radius)?;
        max_log = max_log.max(l.norm());
        let back = exp_matrix(&l)?;
        max_rt = max_rt.max((back.matrix() - g.matrix()).norm());
    }
    Ok(InjectivityReport {
        dim: d,
        samples,
        max_log_norm: max_log,
        max_round_trip: max_rt,
        valid: max_log <= radius.r && max_rt < 1e-10,
    })
}

#[cfg(test)]
mod tests;
