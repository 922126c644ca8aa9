//! Minimization of `(1/m) Σ Λ*(m x_i)` subject to `exp(x₁)⋯exp(x_m) = g`.
//!
//! Segments are parametrized in the affine hull of the support,
//! `m x_i = μ + V u_i`, which is the only place `Λ*` is finite. The
//! constraint `c(u) = log(Ψ_m(x)⁻¹ g) = 0` is enforced by an augmented
//! Lagrangian `F + ⟨ν, c⟩ + ρ|c|²` with BFGS inner solves. Gradients are
//! exact: `∇Λ*` is the Legendre maximizer and the constraint part is
//! pulled back through adjoint Fréchet derivatives of `exp` and `log`
//! (`⟨W, L_f(A)[E]⟩ = ⟨L_f(Aᵀ)[W], E⟩`).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ldp::{Conjugate, IncrementDistribution};
use crate::lie_core::{log_matrix, matfn, AlgebraVector, GroupElement};
use crate::walk::PathDiscretization;

/// Settings of the augmented-Lagrangian solver.
#[derive(Debug, Clone, Serialize)]
pub struct RateOptions {
    /// Penalty weights, escalated when the residual stalls.
    pub rho_schedule: Vec<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
    pub grad_tol: f64,
    pub constraint_tol: f64,
    /// Starting segments; defaults to `log(g)/m`.
    #[serde(skip)]
    pub initial: Option<PathDiscretization>,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            rho_schedule: vec![10.0, 1e2, 1e3, 1e4],
            max_outer: 60,
            max_inner: 500,
            grad_tol: 1e-11,
            constraint_tol: 1e-11,
            initial: None,
        }
    }
}

/// Outcome of one discretized minimization.
#[derive(Debug, Clone, Serialize)]
pub struct DiscretizedRate {
    pub m: usize,
    /// `(1/m) Σ Λ*(m x_i)` at the minimizer; `+∞` when no finite iterate exists
    pub value: f64,
    /// `|log(Ψ_m(x)⁻¹ g)|`
    pub constraint_residual: f64,
    pub minimizer: Option<PathDiscretization>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_rho: f64,
    pub converged: bool,
}

impl DiscretizedRate {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite() && self.constraint_residual < 1e-6
    }

    fn infeasible(m: usize, rho: f64) -> Self {
        DiscretizedRate {
            m,
            value: f64::INFINITY,
            constraint_residual: f64::INFINITY,
            minimizer: None,
            outer_iterations: 0,
            inner_iterations: 0,
            final_rho: rho,
            converged: false,
        }
    }
}

struct Problem<'a> {
    conj: &'a Conjugate,
    target: DMatrix<f64>,
    m: usize,
    base: DMatrix<f64>,
    dirs: Vec<DMatrix<f64>>,
}

struct ConstraintParts {
    xs: Vec<DMatrix<f64>>,
    prefix: Vec<DMatrix<f64>>,
    suffix: Vec<DMatrix<f64>>,
    p_inv: DMatrix<f64>,
    q: DMatrix<f64>,
    c: DMatrix<f64>,
}

struct Evaluation {
    value: f64,
    grad: DVector<f64>,
    residual: DMatrix<f64>,
    rate: f64,
}

impl<'a> Problem<'a> {
    fn k(&self) -> usize {
        self.dirs.len()
    }

    /// `m x_i = μ + V u_i`
    fn scaled_segment(&self, u: &DVector<f64>, i: usize) -> DMatrix<f64> {
        let k = self.k();
        let mut s = self.base.clone();
        for (j, d) in self.dirs.iter().enumerate() {
            s += d * u[i * k + j];
        }
        s
    }

    fn coordinates_of(&self, scaled: &DMatrix<f64>) -> Vec<f64> {
        let rel = scaled - &self.base;
        self.dirs.iter().map(|d| d.dot(&rel)).collect()
    }

    fn path(&self, u: &DVector<f64>) -> PathDiscretization {
        let segs = (0..self.m)
            .map(|i| AlgebraVector::project(&(self.scaled_segment(u, i) / self.m as f64)))
            .collect();
        PathDiscretization::new(segs).expect("m ≥ 1 segments of one dimension")
    }

    /// `F(u)` and its gradient; `None` if any segment leaves the domain.
    fn rate(&self, u: &DVector<f64>, warm: &mut [Option<AlgebraVector>], grad: &mut DVector<f64>) -> Result<Option<f64>> {
        let k = self.k();
        let mf = self.m as f64;
        let mut total = 0.0;
        for i in 0..self.m {
            let x = AlgebraVector::project(&self.scaled_segment(u, i));
            let r = self.conj.eval_from(&x, warm[i].as_ref())?;
            if !r.is_finite() {
                return Ok(None);
            }
            total += r.value / mf;
            if let Some(slope) = r.slope() {
                for (j, d) in self.dirs.iter().enumerate() {
                    grad[i * k + j] += d.dot(slope.matrix()) / mf;
                }
            }
            warm[i] = r.maximizer.clone();
        }
        Ok(Some(total))
    }

    /// Residual `c = log(P⁻¹ g)` with the products needed for its gradient.
    fn constraint(&self, u: &DVector<f64>) -> Option<ConstraintParts> {
        let d = self.base.nrows();
        let mf = self.m as f64;
        let xs: Vec<DMatrix<f64>> = (0..self.m).map(|i| self.scaled_segment(u, i) / mf).collect();
        let exps: Vec<DMatrix<f64>> = xs.iter().map(matfn::expm).collect::<Result<_>>().ok()?;
        // prefix[i] = e^{x_0}⋯e^{x_{i−1}}, suffix[i] = e^{x_{i+1}}⋯e^{x_{m−1}}
        let mut prefix = vec![DMatrix::<f64>::identity(d, d)];
        for e in &exps {
            prefix.push(prefix.last().unwrap() * e);
        }
        let mut suffix = vec![DMatrix::<f64>::identity(d, d); self.m];
        for i in (0..self.m.saturating_sub(1)).rev() {
            suffix[i] = &exps[i + 1] * &suffix[i + 1];
        }
        let p_inv = prefix[self.m].clone().try_inverse()?;
        let q = &p_inv * &self.target;
        let c = AlgebraVector::project(&matfn::logm(&q).ok()?).into_matrix();
        Some(ConstraintParts { xs, prefix, suffix, p_inv, q, c })
    }

    /// Adds the gradient of `⟨W, c(u)⟩` to `grad`.
    fn constraint_gradient(&self, parts: &ConstraintParts, w: &DMatrix<f64>, grad: &mut DVector<f64>) -> Option<()> {
        let mf = self.m as f64;
        let g1 = matfn::logm_frechet(&parts.q.transpose(), w).ok()?;
        let g2 = -(parts.p_inv.transpose() * g1 * parts.q.transpose());
        let k = self.k();
        for i in 0..self.m {
            let g3 = parts.prefix[i].transpose() * &g2 * parts.suffix[i].transpose();
            let gx = matfn::expm_frechet(&parts.xs[i].transpose(), &g3).ok()?;
            for (j, dir) in self.dirs.iter().enumerate() {
                grad[i * k + j] += dir.dot(&gx) / mf;
            }
        }
        Some(())
    }

    fn augmented(
        &self,
        u: &DVector<f64>,
        nu: &DMatrix<f64>,
        rho: f64,
        warm: &mut [Option<AlgebraVector>],
    ) -> Result<Option<Evaluation>> {
        let mut grad = DVector::zeros(u.len());
        let rate = match self.rate(u, warm, &mut grad)? {
            Some(v) => v,
            None => return Ok(None),
        };
        let Some(parts) = self.constraint(u) else {
            return Ok(None);
        };
        let c = parts.c.clone();
        let w = nu + &c * (2.0 * rho);
        if self.constraint_gradient(&parts, &w, &mut grad).is_none() {
            return Ok(None);
        }
        let value = rate + nu.dot(&c) + rho * c.norm_squared();
        Ok(Some(Evaluation { value, grad, residual: c, rate }))
    }
}

struct InnerResult {
    u: DVector<f64>,
    eval: Evaluation,
    iterations: usize,
    converged: bool,
}

/// BFGS with a backtracking line search that rejects infinite trial points.
fn bfgs(
    problem: &Problem,
    u0: DVector<f64>,
    start: Evaluation,
    nu: &DMatrix<f64>,
    rho: f64,
    warm: &mut Vec<Option<AlgebraVector>>,
    opts: &RateOptions,
) -> Result<InnerResult> {
    let n = u0.len();
    let mut u = u0;
    let mut cur = start;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    for it in 0..opts.max_inner {
        let gnorm = cur.grad.amax();
        if gnorm < opts.grad_tol {
            return Ok(InnerResult { u, eval: cur, iterations: it, converged: true });
        }
        let mut dir = -(&h * &cur.grad);
        let mut slope = cur.grad.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -cur.grad.clone();
            slope = cur.grad.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &u + &dir * t;
            let mut trial_warm = warm.clone();
            if let Some(e) = problem.augmented(&trial, nu, rho, &mut trial_warm)? {
                if e.value <= cur.value + 1e-4 * t * slope {
                    accepted = Some((trial, e, trial_warm));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next_u, next, next_warm)) = accepted else {
            // no decrease at working precision
            let converged = gnorm < 1e3 * opts.grad_tol;
            return Ok(InnerResult { u, eval: cur, iterations: it, converged });
        };
        let s = &next_u - &u;
        let y = &next.grad - &cur.grad;
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            if !scaled {
                h *= sy / y.norm_squared();
                scaled = true;
            }
            let r = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * ((1.0 + r * yhy) * r) - (&hy * s.transpose() + &s * hy.transpose()) * r;
        }
        let small_step = s.amax() < 1e-15 * (1.0 + u.amax());
        u = next_u;
        cur = next;
        *warm = next_warm;
        if small_step {
            let converged = cur.grad.amax() < 1e3 * opts.grad_tol;
            return Ok(InnerResult { u, eval: cur, iterations: it + 1, converged });
        }
    }
    Ok(InnerResult { u, eval: cur, iterations: opts.max_inner, converged: false })
}

/// `inf (1/m) Σ Λ*(m x_i)` over `exp(x₁)⋯exp(x_m) = g`.
pub fn discretized_rate(dist: &IncrementDistribution, g: &GroupElement, m: usize, opts: &RateOptions) -> Result<DiscretizedRate> {
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    if g.dim() != dist.dim() {
        return Err(Error::invalid("endpoint and distribution dimensions differ"));
    }
    if opts.rho_schedule.is_empty() || opts.rho_schedule.iter().any(|r| r.is_nan() || *r <= 0.0) {
        return Err(Error::invalid("penalty schedule must be non-empty and positive"));
    }
    let conj = Conjugate::new(dist);
    let problem = Problem {
        conj: &conj,
        target: g.matrix().clone(),
        m,
        base: dist.mean().into_matrix(),
        dirs: conj.hull_directions().into_iter().map(AlgebraVector::into_matrix).collect(),
    };
    let k = problem.k();
    let d = dist.dim();

    // starting point: caller segments, else log(g)/m, projected onto the hull
    let seeds: Vec<DMatrix<f64>> = match &opts.initial {
        Some(p) if p.m() == m => p.segments.iter().map(|s| s.matrix() * m as f64).collect(),
        Some(p) => return Err(Error::invalid(format!("initial path has {} segments, expected {m}", p.m()))),
        None => match log_matrix(g) {
            Ok(l) => vec![l.into_matrix(); m],
            Err(_) => vec![problem.base.clone(); m],
        },
    };
    let mut u = DVector::from_iterator(m * k, seeds.iter().flat_map(|s| problem.coordinates_of(s)));
    let mut warm: Vec<Option<AlgebraVector>> = vec![None; m];
    let nu0 = DMatrix::<f64>::zeros(d, d);
    let rho0 = opts.rho_schedule[0];
    let mut shrink = 0;
    let mut cur = loop {
        if let Some(e) = problem.augmented(&u, &nu0, rho0, &mut warm)? {
            break e;
        }
        // pull infinite segments toward the mean
        u *= 0.9;
        shrink += 1;
        if shrink > 400 {
            return Ok(DiscretizedRate::infeasible(m, rho0));
        }
    };

    let mut nu = nu0;
    let mut rho_idx = 0;
    let mut prev_res = f64::INFINITY;
    let mut inner_total = 0;
    let mut converged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let rho = opts.rho_schedule[rho_idx];
        let inner = bfgs(&problem, u, cur, &nu, rho, &mut warm, opts)?;
        inner_total += inner.iterations;
        u = inner.u;
        let res = inner.eval.residual.norm();
        if res < opts.constraint_tol && inner.converged {
            cur = inner.eval;
            converged = true;
            break;
        }
        nu += &inner.eval.residual * (2.0 * rho);
        if res > 0.25 * prev_res && rho_idx + 1 < opts.rho_schedule.len() {
            rho_idx += 1;
        }
        prev_res = res;
        let rho = opts.rho_schedule[rho_idx];
        cur = match problem.augmented(&u, &nu, rho, &mut warm)? {
            Some(e) => e,
            None => return Err(Error::NonConvergence {
                operation: "discretized_rate",
                iterations: outer,
                detail: "accepted iterate became infeasible".into(),
            }),
        };
    }
    let residual = cur.residual.norm();
    Ok(DiscretizedRate {
        m,
        value: cur.rate.max(0.0),
        constraint_residual: residual,
        minimizer: Some(problem.path(&u)),
        outer_iterations: outer,
        inner_iterations: inner_total,
        final_rho: opts.rho_schedule[rho_idx],
        converged,
    })
}

/// Solves for each `m` in order, seeding from the previous solution when
/// its segment count divides `m` (each segment split into equal parts).
pub fn discretized_rate_refined(
    dist: &IncrementDistribution,
    g: &GroupElement,
    ms: &[usize],
    opts: &RateOptions,
) -> Result<Vec<DiscretizedRate>> {
    let mut out: Vec<DiscretizedRate> = Vec::with_capacity(ms.len());
    for &m in ms {
        let seed = out.iter().rev().find(|r| r.m > 0 && m % r.m == 0 && r.is_feasible()).and_then(|r| {
            let parts = m / r.m;
            r.minimizer.as_ref().map(|p| {
                let segs = p.segments.iter().flat_map(|s| std::iter::repeat_n(s.scale(1.0 / parts as f64), parts)).collect();
                PathDiscretization::new(segs).expect("non-empty")
            })
        });
        let local = RateOptions { initial: seed, ..opts.clone() };
        let cold = discretized_rate(dist, g, m, &RateOptions { initial: None, ..opts.clone() })?;
        let best = if local.initial.is_some() {
            let warm = discretized_rate(dist, g, m, &local)?;
            if warm.is_feasible() && (!cold.is_feasible() || warm.value < cold.value) { warm } else { cold }
        } else {
            cold
        };
        out.push(best);
    }
    Ok(out)
}
