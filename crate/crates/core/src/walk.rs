//! Rescaled random walks `σ_kⁿ = exp(X₁/n)⋯exp(X_k/n)`, their segment
//! decomposition, and the replacement-sum deviation certificate.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;

use crate::bch::{c_constant, BoundCertificate};
use crate::error::{Error, Result};
use crate::ldp::IncrementDistribution;
use crate::lie_core::{
    ad_operator_in, distance_proxy, exp_matrix, log_matrix, random_in_basis, shared_basis, AlgebraVector,
    GroupElement,
};
use crate::rng::stream_rng;

/// Walks longer than this keep checkpoints instead of every point.
pub const FULL_STORAGE_LIMIT: usize = 100_000;

/// Precomputed one-step factors `exp(X_j/n)` for a fixed `n`.
#[derive(Debug, Clone)]
pub struct StepTable {
    n: usize,
    steps: Vec<DMatrix<f64>>,
    sampler: WeightedIndex<f64>,
}

impl StepTable {
    pub fn new(dist: &IncrementDistribution, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("walk length n must be positive"));
        }
        let steps = dist
            .atoms()
            .iter()
            .map(|a| exp_matrix(&a.vector.scale(1.0 / n as f64)).map(GroupElement::into_matrix))
            .collect::<Result<Vec<_>>>()?;
        let sampler = WeightedIndex::new(dist.atoms().iter().map(|a| a.weight))
            .map_err(|e| Error::invalid(format!("atom weights: {e}")))?;
        Ok(StepTable { n, steps, sampler })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn step(&self, atom: usize) -> &DMatrix<f64> {
        &self.steps[atom]
    }

    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// `σ_nⁿ` for a fresh draw, without storing the path.
    pub fn endpoint<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.steps[0].nrows();
        let mut acc = DMatrix::<f64>::identity(d, d);
        let mut scratch = DMatrix::<f64>::zeros(d, d);
        for _ in 0..self.n {
            let j = self.sample_atom(rng);
            acc.mul_to(&self.steps[j], &mut scratch);
            std::mem::swap(&mut acc, &mut scratch);
        }
        acc
    }
}

/// A realized walk. Increments are stored as atom indices; points are
/// kept in full up to [`FULL_STORAGE_LIMIT`] steps, else every `stride`.
#[derive(Debug, Clone)]
pub struct WalkTrajectory {
    n: usize,
    dist: IncrementDistribution,
    atoms: Vec<u32>,
    stride: usize,
    checkpoints: Vec<GroupElement>,
    table: StepTable,
}

fn default_stride(n: usize) -> usize {
    if n <= FULL_STORAGE_LIMIT {
        1
    } else {
        n.div_ceil(FULL_STORAGE_LIMIT)
    }
}

/// Simulates `n` steps from stream 0 of `seed`.
pub fn simulate_walk(dist: &IncrementDistribution, n: usize, seed: u64) -> Result<WalkTrajectory> {
    simulate_walk_with_stride(dist, n, seed, default_stride(n))
}

/// Same as [`simulate_walk`] with checkpoints every `stride` steps
/// (e.g. `⌊n/m⌋` for segment work on long walks).
pub fn simulate_walk_with_stride(dist: &IncrementDistribution, n: usize, seed: u64, stride: usize) -> Result<WalkTrajectory> {
    if stride == 0 {
        return Err(Error::invalid("checkpoint stride must be positive"));
    }
    let table = StepTable::new(dist, n)?;
    let mut rng = stream_rng(seed, 0);
    let atoms: Vec<u32> = (0..n).map(|_| table.sample_atom(&mut rng) as u32).collect();
    let d = dist.dim();
    let mut acc = DMatrix::<f64>::identity(d, d);
    let mut checkpoints = vec![GroupElement::identity(d)];
    for (k, &j) in atoms.iter().enumerate() {
        acc = &acc * table.step(j as usize);
        if (k + 1) % stride == 0 || k + 1 == n {
            checkpoints.push(GroupElement::from_raw(acc.clone()));
        }
    }
    Ok(WalkTrajectory { n, dist: dist.clone(), atoms, stride, checkpoints, table })
}

impl WalkTrajectory {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distribution(&self) -> &IncrementDistribution {
        &self.dist
    }

    pub fn atom_indices(&self) -> &[u32] {
        &self.atoms
    }

    /// `X_k`, 1-based.
    pub fn increment(&self, k: usize) -> &AlgebraVector {
        &self.dist.atoms()[self.atoms[k - 1] as usize].vector
    }

    pub fn increments(&self) -> Vec<AlgebraVector> {
        (1..=self.n).map(|k| self.increment(k).clone()).collect()
    }

    pub fn stores_all_points(&self) -> bool {
        self.stride == 1
    }

    /// `σ_kⁿ`, replayed from the nearest checkpoint when not stored.
    pub fn point(&self, k: usize) -> GroupElement {
        assert!(k <= self.n, "point index {k} beyond walk length {}", self.n);
        let c = k / self.stride;
        let base = c * self.stride;
        if base == k {
            return self.checkpoints[c].clone();
        }
        let mut acc = self.checkpoints[c].matrix().clone();
        for i in base..k {
            acc = &acc * self.table.step(self.atoms[i] as usize);
        }
        GroupElement::from_raw(acc)
    }

    /// All stored points (every point when [`stores_all_points`](Self::stores_all_points)).
    pub fn stored_points(&self) -> &[GroupElement] {
        &self.checkpoints
    }

    pub fn endpoint(&self) -> GroupElement {
        self.point(self.n)
    }

    /// `(σ_iⁿ)⁻¹ σ_jⁿ` as the product of steps `i+1..=j`.
    pub fn displacement(&self, i: usize, j: usize) -> GroupElement {
        let d = self.dist.dim();
        let mut acc = DMatrix::<f64>::identity(d, d);
        for k in i..j {
            acc = &acc * self.table.step(self.atoms[k] as usize);
        }
        GroupElement::from_raw(acc)
    }

    /// `distance_proxy(σ_{k−1}ⁿ, σ_kⁿ)` for every step.
    pub fn step_distances(&self) -> Result<Vec<f64>> {
        let mut cache = vec![None; self.dist.len()];
        self.atoms
            .iter()
            .map(|&j| {
                let j = j as usize;
                if cache[j].is_none() {
                    let g = GroupElement::from_raw(self.table.step(j).clone());
                    cache[j] = Some(log_matrix(&g)?.norm());
                }
                Ok(cache[j].unwrap())
            })
            .collect()
    }
}

/// Segment boundaries `n_l = l⌊n/m⌋` for `l < m`, `n_m = n`.
pub fn segment_boundaries(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("segment count m = {m} must lie in 1..={n}")));
    }
    let len = n / m;
    let mut b: Vec<usize> = (0..m).map(|l| l * len).collect();
    b.push(n);
    Ok(b)
}

/// Segment logs `Y^{n,m,l} = log((σ_{n_{l−1}}ⁿ)⁻¹ σ_{n_l}ⁿ)`.
#[derive(Debug, Clone)]
pub struct SegmentDecomposition {
    pub m: usize,
    pub boundaries: Vec<usize>,
    pub segment_logs: Vec<AlgebraVector>,
}

fn segment_log(g: &GroupElement) -> Result<AlgebraVector> {
    log_matrix(g).map_err(|e| match e {
        Error::OutOfDomain { detail, .. } => Error::out_of_domain(
            "segment_decomposition",
            format!("segment displacement outside the log domain ({detail}); increase m"),
        ),
        other => other,
    })
}

pub fn segment_decomposition(traj: &WalkTrajectory, m: usize) -> Result<SegmentDecomposition> {
    let boundaries = segment_boundaries(traj.n, m)?;
    let segment_logs = boundaries
        .windows(2)
        .map(|w| segment_log(&traj.displacement(w[0], w[1])))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentDecomposition { m, boundaries, segment_logs })
}

/// `Y_k^{n,m,l}` for `k = 1..=n_l − n_{l−1}` (segment `l` is 1-based).
pub fn segment_partial_logs(traj: &WalkTrajectory, m: usize, l: usize) -> Result<Vec<AlgebraVector>> {
    let b = segment_boundaries(traj.n, m)?;
    if l == 0 || l > m {
        return Err(Error::invalid(format!("segment index {l} outside 1..={m}")));
    }
    let (start, end) = (b[l - 1], b[l]);
    let d = traj.dist.dim();
    let mut acc = DMatrix::<f64>::identity(d, d);
    let mut out = Vec::with_capacity(end - start);
    for k in start..end {
        acc = &acc * traj.table.step(traj.atoms[k] as usize);
        out.push(segment_log(&GroupElement::from_raw(acc.clone()))?);
    }
    Ok(out)
}

/// Segments `(x₁, …, x_m)` of a discretized path.
#[derive(Debug, Clone, Serialize)]
pub struct PathDiscretization {
    pub segments: Vec<AlgebraVector>,
}

impl PathDiscretization {
    pub fn new(segments: Vec<AlgebraVector>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("a path needs at least one segment"));
        }
        let d = segments[0].dim();
        if segments.iter().any(|s| s.dim() != d) {
            return Err(Error::invalid("segments have mixed dimensions"));
        }
        Ok(PathDiscretization { segments })
    }

    pub fn uniform(x: &AlgebraVector, m: usize) -> Self {
        PathDiscretization { segments: vec![x.scale(1.0 / m as f64); m] }
    }

    pub fn m(&self) -> usize {
        self.segments.len()
    }

    pub fn dim(&self) -> usize {
        self.segments[0].dim()
    }
}

/// `Ψ_m(x) = exp(x₁)⋯exp(x_m)`.
pub fn psi_m(path: &PathDiscretization) -> Result<GroupElement> {
    let d = path.dim();
    let mut acc = DMatrix::<f64>::identity(d, d);
    for s in &path.segments {
        acc = &acc * exp_matrix(s)?.matrix();
    }
    Ok(GroupElement::from_raw(acc))
}

/// `max_X ‖ad_X‖ / |X|` over the support.
pub fn support_ad_ratio(dist: &IncrementDistribution) -> Result<f64> {
    let basis = shared_basis(dist.dim())?;
    let mut kappa: f64 = 0.0;
    for a in dist.atoms() {
        let n = a.vector.norm();
        if n > 0.0 {
            kappa = kappa.max(ad_operator_in(&basis, &a.vector).norm_estimate() / n);
        }
    }
    Ok(kappa)
}

/// Replacement-sum check over the first segment.
#[derive(Debug, Clone, Serialize)]
pub struct ReplacementReport {
    pub m: usize,
    pub max_deviation: f64,
    /// `c_constant(κB/m)·B/m`
    pub bound: f64,
    pub support_bound: f64,
    pub kappa: f64,
    pub certificate: BoundCertificate,
}

/// `max_{k ≤ ⌊n/m⌋} |log σ_kⁿ − (1/n)Σ_{i≤k} X_i|` against `c_constant(κB/m)·B/m`.
pub fn replacement_deviation(traj: &WalkTrajectory, m: usize) -> Result<ReplacementReport> {
    let b = segment_boundaries(traj.n, m)?;
    let kmax = b[1];
    let dist = &traj.dist;
    let big_b = dist.support_bound();
    let kappa = support_ad_ratio(dist)?;
    let d = dist.dim();
    let mut acc = DMatrix::<f64>::identity(d, d);
    let mut sum = AlgebraVector::zeros(d);
    let inv_n = 1.0 / traj.n as f64;
    let mut worst: f64 = 0.0;
    for k in 0..kmax {
        let j = traj.atoms[k] as usize;
        acc = &acc * traj.table.step(j);
        sum = sum.add(&dist.atoms()[j].vector.scale(inv_n));
        let l = segment_log(&GroupElement::from_raw(acc.clone()))?;
        worst = worst.max(l.sub(&sum).norm());
    }
    let step = big_b / m as f64;
    let constant = c_constant(kappa * step);
    let bound = constant * step;
    Ok(ReplacementReport {
        m,
        max_deviation: worst,
        bound,
        support_bound: big_b,
        kappa,
        certificate: BoundCertificate::new(worst, bound, constant),
    })
}

/// `d(Ψ_m(x), Ψ_m(y)) ≤ C Σ|x_i − y_i|` with `|x_i|, |y_i| ≤ r/m`.
pub fn psi_m_continuity_check(x: &PathDiscretization, y: &PathDiscretization, r: f64, constant: f64) -> Result<BoundCertificate> {
    if x.m() != y.m() || x.dim() != y.dim() {
        return Err(Error::invalid("paths must have the same segment count and dimension"));
    }
    let limit = r / x.m() as f64 * (1.0 + 1e-12);
    if x.segments.iter().chain(&y.segments).any(|s| s.norm() > limit) {
        return Err(Error::out_of_domain("psi_m_continuity_check", format!("a segment exceeds r/m = {}", r / x.m() as f64)));
    }
    let lhs = distance_proxy(&psi_m(x)?, &psi_m(y)?)?;
    let total: f64 = x.segments.iter().zip(&y.segments).map(|(a, b)| a.sub(b).norm()).sum();
    Ok(BoundCertificate::new(lhs, constant * total, constant))
}

/// Largest sampled `d(Ψ_m(x), Ψ_m(y)) / Σ|x_i − y_i|` for segments in the
/// ball of radius `r/m`.
pub fn empirical_psi_constant<R: Rng + ?Sized>(d: usize, r: f64, m: usize, samples: usize, rng: &mut R) -> Result<f64> {
    let basis = shared_basis(d)?;
    let rad = r / m as f64;
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let x = PathDiscretization::new((0..m).map(|_| random_in_basis(&basis, rad, rng)).collect())?;
        let y = PathDiscretization::new((0..m).map(|_| random_in_basis(&basis, rad, rng)).collect())?;
        let total: f64 = x.segments.iter().zip(&y.segments).map(|(a, b)| a.sub(b).norm()).sum();
        if total > 0.0 {
            best = best.max(distance_proxy(&psi_m(&x)?, &psi_m(&y)?)? / total);
        }
    }
    Ok(best)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// 5% critical value of the two-sample statistic (asymptotic).
pub fn ks_critical_value(na: usize, nb: usize) -> f64 {
    1.358 * ((na + nb) as f64 / (na * nb) as f64).sqrt()
}
