//! Path-space rate function: `I(g) = inf ∫₀¹ Λ*(γ(t)⁻¹γ̇(t)) dt` over
//! paths from the identity to `g`.
//!
//! Three independent evaluations are provided: quadrature of `Λ*` along
//! an explicit path, a discretized minimization over products of `m`
//! exponentials, and the closed-form expression for the two-generator
//! example.

mod optimize;

pub use optimize::{discretized_rate, discretized_rate_refined, DiscretizedRate, RateOptions};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::{Conjugate, IncrementDistribution};
use crate::lie_core::{exp_matrix, log_matrix, AlgebraVector, GroupElement, MEMBERSHIP_TOL};
use crate::quadrature::{composite_gauss_legendre, gauss_legendre_unit};
use crate::stochastic_group::is_group_member;

pub const DEFAULT_PANELS: usize = 32;
pub const DEFAULT_NODES_PER_PANEL: usize = 8;
/// Tolerance on `M₁₂ + M₂₁ = 1 − e^{−α}`.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// Piecewise one-parameter path through sampled points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SampledPathData", into = "SampledPathData")]
pub struct SampledPath {
    times: Vec<f64>,
    points: Vec<GroupElement>,
    logs: Vec<AlgebraVector>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledPathData {
    pub times: Vec<f64>,
    pub points: Vec<GroupElement>,
}

impl TryFrom<SampledPathData> for SampledPath {
    type Error = Error;
    fn try_from(d: SampledPathData) -> Result<Self> {
        SampledPath::new(d.times, d.points)
    }
}

impl From<SampledPath> for SampledPathData {
    fn from(p: SampledPath) -> Self {
        SampledPathData { times: p.times, points: p.points }
    }
}

impl SampledPath {
    /// Times must increase strictly from 0 to 1 and the first point must
    /// be the identity; each consecutive ratio needs a principal log.
    pub fn new(times: Vec<f64>, points: Vec<GroupElement>) -> Result<Self> {
        if times.len() < 2 || times.len() != points.len() {
            return Err(Error::invalid("need at least two samples with matching times and points"));
        }
        if times[0] != 0.0 || (times[times.len() - 1] - 1.0).abs() > 1e-15 {
            return Err(Error::invalid("sample times must cover [0, 1]"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("sample times must increase strictly"));
        }
        let d = points[0].dim();
        if (points[0].matrix() - DMatrix::<f64>::identity(d, d)).amax() > 1e-12 {
            return Err(Error::invalid("sampled path must start at the identity"));
        }
        let logs = points
            .windows(2)
            .map(|w| {
                log_matrix(&w[0].left_divide(&w[1])?).map_err(|e| match e {
                    Error::OutOfDomain { detail, .. } => {
                        Error::out_of_domain("sampled_path", format!("samples too sparse: {detail}"))
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledPath { times, points, logs })
    }

    /// Samples `γ` at `k + 1` equally spaced times.
    pub fn from_path(path: &PathSpec, k: usize) -> Result<Self> {
        let times: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        let points = times.iter().map(|t| path.point(*t)).collect::<Result<Vec<_>>>()?;
        SampledPath::new(times, points)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[GroupElement] {
        &self.points
    }

    fn interval(&self, t: f64) -> usize {
        let j = self.times.partition_point(|s| *s <= t);
        j.saturating_sub(1).min(self.times.len() - 2)
    }

    fn velocity(&self, j: usize) -> AlgebraVector {
        self.logs[j].scale(1.0 / (self.times[j + 1] - self.times[j]))
    }
}

/// A path `γ: [0,1] → S(d,ℝ)` with `γ(0) = e`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathSpec {
    /// `γ(t) = exp(tX)`
    OneParameter { generator: AlgebraVector },
    /// `γ₁(t) = a(1 − e^{−αt})`, `γ₂(t) = b(1 − e^{−αt})` with
    /// `a = M₁₂/(1 − e^{−α})`, `b = M₂₁/(1 − e^{−α})`.
    ClosedFormS2 { alpha: f64, m12: f64, m21: f64 },
    Sampled(SampledPath),
}

impl PathSpec {
    pub fn dim(&self) -> usize {
        match self {
            PathSpec::OneParameter { generator } => generator.dim(),
            PathSpec::ClosedFormS2 { .. } => 2,
            PathSpec::Sampled(s) => s.points[0].dim(),
        }
    }

    fn closed_form_coefficients(alpha: f64, m12: f64, m21: f64) -> (f64, f64) {
        let denom = -(-alpha).exp_m1();
        (m12 / denom, m21 / denom)
    }

    pub fn point(&self, t: f64) -> Result<GroupElement> {
        check_time(t)?;
        match self {
            PathSpec::OneParameter { generator } => exp_matrix(&generator.scale(t)),
            PathSpec::ClosedFormS2 { alpha, m12, m21 } => {
                let (a, b) = Self::closed_form_coefficients(*alpha, *m12, *m21);
                let psi = -(-alpha * t).exp_m1();
                let (g1, g2) = (a * psi, b * psi);
                Ok(GroupElement::from_raw(DMatrix::from_row_slice(2, 2, &[1.0 - g1, g1, g2, 1.0 - g2])))
            }
            PathSpec::Sampled(s) => {
                let j = s.interval(t);
                let frac = (t - s.times[j]) / (s.times[j + 1] - s.times[j]);
                Ok(s.points[j].mul(&exp_matrix(&s.logs[j].scale(frac))?))
            }
        }
    }

    /// `γ(t)⁻¹γ̇(t)` from the analytic expression (closed forms) or from
    /// the piecewise one-parameter interpolant (sampled paths).
    pub fn log_derivative(&self, t: f64) -> Result<AlgebraVector> {
        check_time(t)?;
        match self {
            PathSpec::OneParameter { generator } => Ok(generator.clone()),
            PathSpec::ClosedFormS2 { alpha, m12, m21 } => {
                let (a, b) = Self::closed_form_coefficients(*alpha, *m12, *m21);
                let psi = -(-alpha * t).exp_m1();
                let dpsi = alpha * (-alpha * t).exp();
                let det = 1.0 - (a + b) * psi;
                if det.abs() < 1e-14 {
                    return Err(Error::Singular { det });
                }
                let (g1, g2, dg1, dg2) = (a * psi, b * psi, a * dpsi, b * dpsi);
                let x1 = ((1.0 - g2) * dg1 + g1 * dg2) / det;
                let x2 = (g2 * dg1 + (1.0 - g1) * dg2) / det;
                Ok(AlgebraVector::project(&DMatrix::from_row_slice(2, 2, &[-x1, x1, x2, -x2])))
            }
            PathSpec::Sampled(s) => Ok(s.velocity(s.interval(t))),
        }
    }

    /// Break points where the log-derivative may jump.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            PathSpec::Sampled(s) => s.times.clone(),
            _ => vec![0.0, 1.0],
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `γ(t)⁻¹γ̇(t)`: analytic for closed-form paths, central difference of
/// step `h` (kept inside the current sample interval) for sampled paths.
pub fn logarithmic_derivative(path: &PathSpec, t: f64, h: f64) -> Result<AlgebraVector> {
    match path {
        PathSpec::Sampled(s) => {
            check_time(t)?;
            let j = s.interval(t);
            let (lo, hi) = (s.times[j], s.times[j + 1]);
            let h = h.min(0.5 * (hi - lo));
            let centre = t.clamp(lo + h, hi - h);
            central_difference(path, centre, h)
        }
        _ => path.log_derivative(t),
    }
}

/// `γ(t)⁻¹ (γ(t+h) − γ(t−h)) / 2h`, projected onto the algebra.
pub fn central_difference(path: &PathSpec, t: f64, h: f64) -> Result<AlgebraVector> {
    if h.is_nan() || h <= 0.0 || t - h < 0.0 || t + h > 1.0 {
        return Err(Error::invalid(format!("need 0 ≤ t − h and t + h ≤ 1 (t = {t}, h = {h})")));
    }
    let g = path.point(t)?;
    let diff = (path.point(t + h)?.into_matrix() - path.point(t - h)?.into_matrix()) / (2.0 * h);
    let lu = g.matrix().clone().lu();
    let v = lu.solve(&diff).ok_or(Error::Singular { det: g.matrix().determinant() })?;
    Ok(AlgebraVector::project(&v))
}

/// Quadrature nodes on `[0, 1]`, `per_panel` Gauss–Legendre nodes on each
/// of `DEFAULT_PANELS` panels (sampled paths: one panel per sample interval).
fn path_nodes(path: &PathSpec, per_panel: usize) -> Vec<(f64, f64)> {
    match path {
        PathSpec::Sampled(s) => s
            .times
            .windows(2)
            .flat_map(|w| composite_gauss_legendre(w[0], w[1], 1, per_panel))
            .collect(),
        _ => composite_gauss_legendre(0.0, 1.0, DEFAULT_PANELS, per_panel),
    }
}

/// `∫₀¹ Λ*(γ⁻¹γ̇) dt` by composite Gauss–Legendre; `+∞` when any node
/// leaves the domain of `Λ*`.
pub fn rate_along_path(dist: &IncrementDistribution, path: &PathSpec, quad_nodes: usize) -> Result<f64> {
    rate_along_path_with(&Conjugate::new(dist), path, quad_nodes)
}

pub fn rate_along_path_with(conj: &Conjugate, path: &PathSpec, quad_nodes: usize) -> Result<f64> {
    if quad_nodes == 0 {
        return Err(Error::invalid("quad_nodes must be positive"));
    }
    if path.dim() != conj.distribution().dim() {
        return Err(Error::invalid("path and distribution dimensions differ"));
    }
    let mut total = 0.0;
    let mut warm: Option<AlgebraVector> = None;
    for (t, w) in path_nodes(path, quad_nodes) {
        let r = conj.eval_from(&path.log_derivative(t)?, warm.as_ref())?;
        if !r.is_finite() {
            return Ok(f64::INFINITY);
        }
        warm = r.maximizer.clone();
        total += w * r.value;
    }
    Ok(total)
}

/// `∫_a^b γ⁻¹γ̇ dt` with `nodes` Gauss–Legendre nodes (per sample interval
/// for sampled paths).
pub fn segment_integral(path: &PathSpec, a: f64, b: f64, nodes: usize) -> Result<AlgebraVector> {
    let mut cuts = vec![a];
    cuts.extend(path.knots().into_iter().filter(|k| *k > a && *k < b));
    cuts.push(b);
    let (x, w) = gauss_legendre_unit(nodes);
    let mut acc = AlgebraVector::zeros(path.dim());
    for c in cuts.windows(2) {
        let h = c[1] - c[0];
        for (xi, wi) in x.iter().zip(&w) {
            acc = acc.add(&path.log_derivative(c[0] + h * xi)?.scale(h * wi));
        }
    }
    Ok(acc)
}

/// Segment-log versus segment-integral defect on an `m`-panel grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FundamentalDefect {
    pub m: usize,
    /// `max_i |log(γ(t_{i−1})⁻¹γ(t_i)) − ∫_{t_{i−1}}^{t_i} γ⁻¹γ̇|`
    pub max_defect: f64,
    /// `m · max_defect`, the empirical `L_m`
    pub scaled: f64,
}

pub fn fundamental_theorem_defect(path: &PathSpec, m: usize) -> Result<FundamentalDefect> {
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    let mut worst: f64 = 0.0;
    for i in 1..=m {
        let (a, b) = ((i - 1) as f64 / m as f64, i as f64 / m as f64);
        let seg = log_matrix(&path.point(a)?.left_divide(&path.point(b)?)?)?;
        let int = segment_integral(path, a, b, 16)?;
        worst = worst.max(seg.sub(&int).norm());
    }
    Ok(FundamentalDefect { m, max_defect: worst, scaled: m as f64 * worst })
}

/// `(1/m) Σ Λ*(m ỹ_i)` with `ỹ_i` the segment integrals, against the path integral.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JensenCheck {
    pub m: usize,
    pub discrete: f64,
    pub integral: f64,
    pub pass: bool,
}

pub fn jensen_check(dist: &IncrementDistribution, path: &PathSpec, m: usize, tolerance: f64) -> Result<JensenCheck> {
    let conj = Conjugate::new(dist);
    let integral = rate_along_path_with(&conj, path, DEFAULT_NODES_PER_PANEL)?;
    let mut discrete = 0.0;
    for i in 1..=m {
        let (a, b) = ((i - 1) as f64 / m as f64, i as f64 / m as f64);
        let y = segment_integral(path, a, b, 16)?;
        discrete += conj.eval(&y.scale(m as f64))?.value / m as f64;
    }
    Ok(JensenCheck { m, discrete, integral, pass: discrete <= integral + tolerance })
}

fn check_s2_endpoint(op: &'static str, m: &GroupElement) -> Result<()> {
    if m.dim() != 2 {
        return Err(Error::invalid(format!("{op}: endpoint must be 2x2")));
    }
    let rep = is_group_member(m.matrix(), MEMBERSHIP_TOL)?;
    if !rep.member {
        return Err(Error::invalid(format!("{op}: endpoint is not in S(2,R)")));
    }
    Ok(())
}

/// `M₁₂ + M₂₁ − (1 − e^{−α})`
pub fn constraint_residual_s2(m: &GroupElement, alpha: f64) -> f64 {
    m.matrix()[(0, 1)] + m.matrix()[(1, 0)] + (-alpha).exp_m1()
}

/// Closed-form candidate minimizer from the identity to `M` (α = β example).
pub fn optimal_path_s2(alpha: f64, m: &GroupElement) -> Result<PathSpec> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    check_s2_endpoint("optimal_path_s2", m)?;
    let r = constraint_residual_s2(m, alpha);
    if r.abs() > CONSTRAINT_TOL {
        return Err(Error::Infeasible {
            operation: "optimal_path_s2",
            detail: format!("M12 + M21 − (1 − e^(−α)) = {r:e}; the rate is infinite off this line"),
        });
    }
    Ok(PathSpec::ClosedFormS2 { alpha, m12: m.matrix()[(0, 1)], m21: m.matrix()[(1, 0)] })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// The published closed-form expression for `I(M)` in the α = β example.
pub fn closed_form_rate_s2(m: &GroupElement, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    check_s2_endpoint("closed_form_rate_s2", m)?;
    if constraint_residual_s2(m, alpha).abs() > CONSTRAINT_TOL {
        return Ok(f64::INFINITY);
    }
    let (m12, m21) = (m.matrix()[(0, 1)], m.matrix()[(1, 0)]);
    let denom = -(-alpha).exp_m1();
    let a2 = alpha * alpha;
    Ok(a2 * xlogy(m12, alpha * m12 / denom) + a2 * xlogy(m21, alpha * m21 / denom) + (1.0 - alpha) * (-alpha).exp()
        - (a2 / 2.0).ln()
        - 1.0)
}

/// Point on the constraint line with the given `M₁₂`.
pub fn constrained_endpoint_s2(alpha: f64, m12: f64) -> Result<GroupElement> {
    let m21 = -(-alpha).exp_m1() - m12;
    GroupElement::new(DMatrix::from_row_slice(2, 2, &[1.0 - m12, m12, m21, 1.0 - m21]))
}

/// Side-by-side rate values for one endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub endpoint: GroupElement,
    pub discretized: Vec<DiscretizedRate>,
    /// `∫Λ*` along the supplied path
    pub quadrature: Option<f64>,
    pub closed_form: Option<f64>,
    /// `closed_form − quadrature`
    pub closed_form_gap: Option<f64>,
}

impl RateReport {
    pub fn discretized_at(&self, m: usize) -> Option<&DiscretizedRate> {
        self.discretized.iter().find(|d| d.m == m)
    }
}

/// Discretized values for each `m` plus, when given, the path quadrature
/// and the closed form.
pub fn rate_report(
    dist: &IncrementDistribution,
    g: &GroupElement,
    ms: &[usize],
    path: Option<&PathSpec>,
    closed_form: Option<f64>,
    opts: &RateOptions,
) -> Result<RateReport> {
    let discretized = ms.iter().map(|&m| discretized_rate(dist, g, m, opts)).collect::<Result<Vec<_>>>()?;
    let quadrature = path.map(|p| rate_along_path(dist, p, DEFAULT_NODES_PER_PANEL)).transpose()?;
    let closed_form_gap = match (closed_form, quadrature) {
        (Some(c), Some(q)) => Some(c - q),
        _ => None,
    };
    Ok(RateReport { endpoint: g.clone(), discretized, quadrature, closed_form, closed_form_gap })
}
