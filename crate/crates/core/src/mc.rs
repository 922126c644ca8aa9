//! Monte Carlo estimates of `P(σ_nⁿ ∈ B(g, ε))` and the empirical rate
//! curve `n ↦ −(1/n) log p̂`, with optional exponential tilting.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::{log_mgf, Conjugate, IncrementDistribution};
use crate::lie_core::{log_matrix, AlgebraVector, GroupElement};
use crate::rng::stream_rng;
use crate::walk::StepTable;

pub const DEFAULT_SHARDS: usize = 8;
/// Two-sided 95% normal quantile.
pub const Z_TWO_SIDED: f64 = 1.959963984540054;
/// One-sided 95% normal quantile, used for zero-hit upper bounds.
pub const Z_ONE_SIDED: f64 = 1.6448536269514722;
/// Effective sample sizes below this flag a degenerate tilt.
pub const ESS_WARNING: f64 = 10.0;

/// Proxy ball `{h : |log(g⁻¹h)| ≤ ε}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallEvent {
    pub center: GroupElement,
    pub radius: f64,
}

impl BallEvent {
    pub fn new(center: GroupElement, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(BallEvent { center, radius })
    }

    pub fn contains(&self, h: &GroupElement) -> bool {
        self.compiled().map(|c| c.contains(h.matrix())).unwrap_or(false)
    }

    fn compiled(&self) -> Result<CompiledBall> {
        Ok(CompiledBall { center_inv: self.center.inverse()?.into_matrix(), radius: self.radius })
    }
}

struct CompiledBall {
    center_inv: DMatrix<f64>,
    radius: f64,
}

impl CompiledBall {
    fn contains(&self, h: &DMatrix<f64>) -> bool {
        let rel = &self.center_inv * h;
        // quick reject: |log M| ≥ |M − I| / e^{|log M|}, so a far matrix can skip the log
        let off = (&rel - DMatrix::<f64>::identity(rel.nrows(), rel.ncols())).norm();
        if off > self.radius * self.radius.exp() * 1.01 {
            return false;
        }
        match log_matrix(&GroupElement::from_raw(rel)) {
            Ok(x) => x.norm() <= self.radius,
            Err(_) => false,
        }
    }
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub n: usize,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub lower: f64,
    pub upper: f64,
    /// Kish effective sample size of the hitting weights (`= hits` untilted).
    pub ess: f64,
    pub tilted: bool,
    pub degenerate_tilt: bool,
}

impl Estimate {
    /// `−(1/n) log p̂`.
    pub fn rate(&self) -> f64 {
        neg_log_rate(self.p_hat, self.n)
    }

    /// Rate interval `(−log(upper)/n, −log(lower)/n)`.
    pub fn rate_interval(&self) -> (f64, f64) {
        (neg_log_rate(self.upper, self.n), neg_log_rate(self.lower, self.n))
    }
}

fn neg_log_rate(p: f64, n: usize) -> f64 {
    if p <= 0.0 {
        f64::INFINITY
    } else {
        (-p.ln() / n as f64).max(0.0)
    }
}

/// Wilson score interval; with no hits the one-sided upper bound.
pub fn wilson_interval(hits: usize, samples: usize) -> (f64, f64) {
    let n = samples as f64;
    if hits == 0 {
        let z2 = Z_ONE_SIDED * Z_ONE_SIDED;
        return (0.0, z2 / (n + z2));
    }
    let z = Z_TWO_SIDED;
    let p = hits as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Execution knobs that do not change the estimand.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McOptions {
    /// Independent RNG streams; fixed so results do not depend on thread count.
    pub shards: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { shards: DEFAULT_SHARDS }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    samples: usize,
    hits: usize,
    sum_w: f64,
    sum_w2: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally { samples: self.samples + o.samples, hits: self.hits + o.hits, sum_w: self.sum_w + o.sum_w, sum_w2: self.sum_w2 + o.sum_w2 }
    }
}

struct Tilt {
    /// `⟨λ, X_j⟩` per atom.
    scores: Vec<f64>,
    log_mgf: f64,
}

fn stream_id(n: usize, shard: usize) -> u64 {
    ((n as u64) << 24) | shard as u64
}

fn shard_sizes(samples: usize, shards: usize) -> Vec<usize> {
    (0..shards).map(|s| samples / shards + usize::from(s < samples % shards)).collect()
}

fn run(
    dist: &IncrementDistribution,
    n: usize,
    event: &BallEvent,
    samples: usize,
    seed: u64,
    tilt: Option<&AlgebraVector>,
    opts: &McOptions,
) -> Result<Estimate> {
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    if opts.shards == 0 {
        return Err(Error::invalid("shards must be at least 1"));
    }
    if event.center.dim() != dist.dim() {
        return Err(Error::invalid("event and distribution dimensions differ"));
    }
    let tilt = tilt.filter(|l| !l.is_zero());
    let (sampling, tilt_data) = match tilt {
        Some(l) => {
            if l.dim() != dist.dim() {
                return Err(Error::invalid("tilt dimension mismatch"));
            }
            let scores = dist.atoms().iter().map(|a| l.inner(&a.vector)).collect();
            (dist.tilted(l), Some(Tilt { scores, log_mgf: log_mgf(dist, l) }))
        }
        None => (dist.clone(), None),
    };
    let table = StepTable::new(&sampling, n)?;
    let ball = event.compiled()?;
    let d = dist.dim();

    let tally = shard_sizes(samples, opts.shards)
        .into_par_iter()
        .enumerate()
        .map(|(shard, count)| {
            let mut rng = stream_rng(seed, stream_id(n, shard));
            let mut t = Tally { samples: count, ..Tally::default() };
            let mut acc = DMatrix::<f64>::identity(d, d);
            let mut scratch = DMatrix::<f64>::zeros(d, d);
            for _ in 0..count {
                acc.fill_with_identity();
                let mut score = 0.0;
                for _ in 0..n {
                    let j = table.sample_atom(&mut rng);
                    acc.mul_to(table.step(j), &mut scratch);
                    std::mem::swap(&mut acc, &mut scratch);
                    if let Some(td) = &tilt_data {
                        score += td.scores[j];
                    }
                }
                if ball.contains(&acc) {
                    let w = match &tilt_data {
                        Some(td) => (n as f64 * td.log_mgf - score).exp(),
                        None => 1.0,
                    };
                    t.hits += 1;
                    t.sum_w += w;
                    t.sum_w2 += w * w;
                }
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    let nf = tally.samples as f64;
    let ess = if tally.sum_w2 > 0.0 { tally.sum_w * tally.sum_w / tally.sum_w2 } else { 0.0 };
    Ok(match tilt_data {
        None => {
            let (lower, upper) = wilson_interval(tally.hits, tally.samples);
            Estimate {
                n,
                samples: tally.samples,
                hits: tally.hits,
                p_hat: tally.hits as f64 / nf,
                lower,
                upper,
                ess,
                tilted: false,
                degenerate_tilt: false,
            }
        }
        Some(_) => {
            let p_hat = tally.sum_w / nf;
            let (lower, upper) = if tally.hits == 0 {
                wilson_interval(0, tally.samples)
            } else {
                let var = (tally.sum_w2 / nf - p_hat * p_hat).max(0.0);
                let half = Z_TWO_SIDED * (var / nf).sqrt();
                ((p_hat - half).max(0.0), p_hat + half)
            };
            Estimate {
                n,
                samples: tally.samples,
                hits: tally.hits,
                p_hat,
                lower,
                upper,
                ess,
                tilted: true,
                degenerate_tilt: ess < ESS_WARNING,
            }
        }
    })
}

/// Plain frequency estimate with a Wilson interval.
pub fn estimate_probability(dist: &IncrementDistribution, n: usize, event: &BallEvent, samples: usize, seed: u64) -> Result<Estimate> {
    run(dist, n, event, samples, seed, None, &McOptions::default())
}

pub fn estimate_probability_with(
    dist: &IncrementDistribution,
    n: usize,
    event: &BallEvent,
    samples: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<Estimate> {
    run(dist, n, event, samples, seed, None, opts)
}

/// Importance-sampling estimate under increments tilted by `λ`.
/// A zero tilt takes exactly the untilted path.
pub fn tilted_estimator(
    dist: &IncrementDistribution,
    n: usize,
    event: &BallEvent,
    samples: usize,
    tilt: &AlgebraVector,
    seed: u64,
) -> Result<Estimate> {
    run(dist, n, event, samples, seed, Some(tilt), &McOptions::default())
}

pub fn tilted_estimator_with(
    dist: &IncrementDistribution,
    n: usize,
    event: &BallEvent,
    samples: usize,
    tilt: &AlgebraVector,
    seed: u64,
    opts: &McOptions,
) -> Result<Estimate> {
    run(dist, n, event, samples, seed, Some(tilt), opts)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TiltPolicy {
    None,
    Fixed { lambda: AlgebraVector },
    Auto,
}

/// `λ*` at `log(center)` when the Legendre supremum is attained there.
pub fn auto_tilt(dist: &IncrementDistribution, center: &GroupElement) -> Result<Option<AlgebraVector>> {
    let x = match log_matrix(center) {
        Ok(x) => x,
        Err(_) => return Ok(None),
    };
    let r = Conjugate::new(dist).eval(&x)?;
    Ok(if r.is_finite() { r.slope().cloned() } else { None })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCurveRow {
    pub n: usize,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub rate: f64,
    pub rate_lower: f64,
    pub rate_upper: f64,
    pub ess: f64,
    pub degenerate_tilt: bool,
}

impl From<&Estimate> for RateCurveRow {
    fn from(e: &Estimate) -> Self {
        let (rate_lower, rate_upper) = e.rate_interval();
        RateCurveRow {
            n: e.n,
            samples: e.samples,
            hits: e.hits,
            p_hat: e.p_hat,
            p_lower: e.lower,
            p_upper: e.upper,
            rate: e.rate(),
            rate_lower,
            rate_upper,
            ess: e.ess,
            degenerate_tilt: e.degenerate_tilt,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCurve {
    /// Tilt actually applied (`None` for plain sampling).
    pub tilt: Option<AlgebraVector>,
    pub rows: Vec<RateCurveRow>,
}

impl RateCurve {
    pub fn row(&self, n: usize) -> Option<&RateCurveRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// Consecutive rates decrease, or their intervals overlap.
    pub fn non_increasing_within_intervals(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].rate <= w[0].rate || w[1].rate_lower <= w[0].rate_upper)
    }
}

pub fn empirical_rate_curve(
    dist: &IncrementDistribution,
    event: &BallEvent,
    ns: &[usize],
    samples: usize,
    seed: u64,
    policy: &TiltPolicy,
    opts: &McOptions,
) -> Result<RateCurve> {
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::invalid("ns must be a non-empty increasing list of positive lengths"));
    }
    let tilt = match policy {
        TiltPolicy::None => None,
        TiltPolicy::Fixed { lambda } => Some(lambda.clone()),
        TiltPolicy::Auto => auto_tilt(dist, &event.center)?,
    };
    let rows = ns
        .iter()
        .map(|&n| run(dist, n, event, samples, seed, tilt.as_ref(), opts).map(|e| RateCurveRow::from(&e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurve { tilt, rows })
}
