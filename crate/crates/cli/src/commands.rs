//! Subcommand bodies. Each returns a JSON result, an optional CSV table and
//! whether every certificate it checked passed.

use rand::SeedableRng;
use rayon::prelude::*;
use serde_json::{json, Value};

use lieldp::bch::{ad_norm, sample_pair, validate_bch_radius, verify_log_product};
use lieldp::lie_core::{exp_matrix, log_matrix, random_algebra_vector, validate_injectivity, InjectivityRadius};
use lieldp::mc::{empirical_rate_curve, BallEvent, McOptions, TiltPolicy};
use lieldp::rate::{
    closed_form_rate_s2, discretized_rate_refined, optimal_path_s2, rate_along_path, RateOptions,
};
use lieldp::rng::WalkRng;
use lieldp::stochastic_group::{exp_a_closed_form, exp_b_closed_form};
use lieldp::walk::{replacement_deviation, segment_decomposition, simulate_walk};
use lieldp::{AlgebraVector, Conjugate, Error};

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{fmt_f64, num, opt_num, Table};

#[derive(Debug)]
pub enum Failure {
    Usage(ConfigError),
    Numeric { operation: String, error: Error },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e)
    }
}

/// Wraps a library error raised by `operation`.
fn numeric(operation: &'static str) -> impl Fn(Error) -> Failure {
    move |error| match error {
        Error::InvalidArgument(msg) => Failure::Usage(ConfigError::new("input", msg)),
        Error::InvalidDimension { dim, reason } => Failure::Usage(ConfigError::new("dim", format!("{dim}: {reason}"))),
        Error::OutOfDomain { operation: op, .. }
        | Error::Infeasible { operation: op, .. }
        | Error::NonConvergence { operation: op, .. } => Failure::Numeric { operation: op.to_string(), error },
        other => Failure::Numeric { operation: operation.to_string(), error: other },
    }
}

pub struct Outcome {
    pub result: Value,
    pub csv: Option<Vec<u8>>,
    pub certificates_pass: bool,
    /// Extra metadata entries (never used for certificates).
    pub notes: Vec<(&'static str, Value)>,
}

/// Module that owns each subcommand, for diagnostics.
pub fn module_of(command: &str) -> &'static str {
    match command {
        "simulate" => "walk",
        "legendre" => "ldp",
        "rate" => "rate",
        "mc-estimate" => "mc",
        "verify-bounds" => "bch",
        "exp-log-selftest" => "lie_core",
        _ => "cli",
    }
}

/// Fills per-command defaults into `cfg`.
pub fn apply_defaults(command: &str, cfg: &mut ExperimentConfig) {
    cfg.set_default("seed", 0);
    cfg.set_default("out", ".");
    let uses_model = matches!(command, "simulate" | "legendre" | "rate" | "mc-estimate");
    if uses_model && cfg.get("atoms").is_none() {
        cfg.set_default("alpha", 1);
        cfg.set_default("beta", 1);
    }
    match command {
        "simulate" => {
            cfg.set_default("n", 1000);
            cfg.set_default("m", 10);
        }
        "rate" => {
            let o = RateOptions::default();
            cfg.set_default("m", "8,16,32");
            cfg.set_default("quad_nodes", 8);
            cfg.set_default("grad_tol", o.grad_tol);
            cfg.set_default("constraint_tol", o.constraint_tol);
        }
        "mc-estimate" => {
            cfg.set_default("radius", 0.05);
            cfg.set_default("ns", "20,40,80,160");
            cfg.set_default("samples", 10000);
            cfg.set_default("tilt", "none");
            cfg.set_default("shards", lieldp::mc::DEFAULT_SHARDS);
        }
        "verify-bounds" => {
            cfg.set_default("dim", 2);
            cfg.set_default("radius", lieldp::bch::R_BCH);
            cfg.set_default("pairs", 1000);
        }
        "exp-log-selftest" => {
            cfg.set_default("dim", 2);
            cfg.set_default("radius", 0.5);
            cfg.set_default("samples", 1000);
            cfg.set_default("tol", 1e-12);
        }
        _ => {}
    }
}

pub fn dispatch(command: &str, cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    match command {
        "simulate" => simulate(cfg),
        "legendre" => legendre(cfg),
        "rate" => rate(cfg),
        "mc-estimate" => mc_estimate(cfg),
        "verify-bounds" => verify_bounds(cfg),
        "exp-log-selftest" => exp_log_selftest(cfg),
        other => Err(Failure::Usage(ConfigError::new("command", format!("unknown subcommand `{other}`")))),
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let dist = cfg.distribution()?;
    let n = cfg.positive_usize("n")?;
    let m = cfg.positive_usize("m")?;
    let seed: u64 = cfg.parsed("seed")?;
    if m > n {
        return Err(ConfigError::new("m", format!("must not exceed n = {n}")).into());
    }
    let traj = simulate_walk(&dist, n, seed).map_err(numeric("simulate_walk"))?;
    let endpoint = traj.endpoint();
    let report = replacement_deviation(&traj, m).map_err(numeric("replacement_deviation"))?;
    let segments = segment_decomposition(&traj, m).map_err(numeric("segment_decomposition"))?;
    let distances = traj.step_distances().map_err(numeric("step_distances"))?;

    let mut table = Table::new(&["step", "distance"]);
    for (k, d) in distances.iter().enumerate() {
        table.row([(k + 1).to_string(), fmt_f64(*d)]);
    }
    let result = json!({
        "n": n,
        "m": m,
        "endpoint": to_value(&endpoint),
        "endpoint_log": log_matrix(&endpoint).ok().map(|x| to_value(&x)),
        "replacement": {
            "max_deviation": num(report.max_deviation),
            "bound": num(report.bound),
            "support_bound": num(report.support_bound),
            "kappa": num(report.kappa),
            "constant": num(report.certificate.constant),
            "pass": report.certificate.pass,
        },
        "segment_boundaries": segments.boundaries,
        "segment_logs": to_value(&segments.segment_logs),
    });
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: report.certificate.pass, notes: vec![] })
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn legendre(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let dist = cfg.distribution()?;
    let points: Vec<AlgebraVector> = if cfg.get("x").is_some() {
        vec![cfg.algebra_vector("x")?]
    } else if let (Some(g1), Some(g2)) = (cfg.grid("grid_x1")?, cfg.grid("grid_x2")?) {
        let mut v = Vec::new();
        for x1 in linspace(g1.0, g1.1, g1.2) {
            for x2 in linspace(g2.0, g2.1, g2.2) {
                v.push(lieldp::ExampleModel::algebra_point(x1, x2));
            }
        }
        v
    } else if cfg.get("x1").is_some() || cfg.get("x2").is_some() {
        vec![lieldp::ExampleModel::algebra_point(cfg.parsed("x1")?, cfg.parsed("x2")?)]
    } else {
        return Err(ConfigError::new("x", "give x, x1/x2, or grid_x1 and grid_x2").into());
    };
    if points.iter().any(|p| p.dim() != dist.dim()) {
        return Err(ConfigError::new("x", "dimension differs from the model").into());
    }
    let conj = Conjugate::new(&dist);
    let results = points
        .par_iter()
        .map(|x| conj.eval(x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(numeric("legendre"))?;

    let mut table = Table::new(&["x", "value", "finite", "domain", "lambda", "gradient_norm", "iterations"]);
    let mut finite = 0;
    for (x, r) in points.iter().zip(&results) {
        finite += usize::from(r.is_finite());
        let lambda = r.maximizer.as_ref().map(|l| to_value(l).to_string()).unwrap_or_default();
        table.row([
            to_value(x).to_string(),
            fmt_f64(r.value),
            r.is_finite().to_string(),
            to_value(&r.domain).as_str().unwrap_or_default().to_string(),
            lambda,
            fmt_f64(r.gradient_norm),
            r.iterations.to_string(),
        ]);
    }
    let mut result = json!({ "points": points.len(), "finite": finite });
    if let [r] = results.as_slice() {
        result["value"] = num(r.value);
        result["domain"] = to_value(&r.domain);
        result["maximizer"] = r.maximizer.as_ref().map(to_value).unwrap_or(Value::Null);
    }
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: true, notes: vec![] })
}

fn rate(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let dist = cfg.distribution()?;
    let g = cfg.group_element("endpoint")?;
    if g.dim() != dist.dim() {
        return Err(ConfigError::new("endpoint", "dimension differs from the model").into());
    }
    let ms = cfg.usize_list("m")?;
    let quad_nodes = cfg.positive_usize("quad_nodes")?;
    let opts = RateOptions {
        grad_tol: cfg.positive_f64("grad_tol")?,
        constraint_tol: cfg.positive_f64("constraint_tol")?,
        ..RateOptions::default()
    };
    let mut sorted = ms.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let disc = discretized_rate_refined(&dist, &g, &sorted, &opts).map_err(numeric("discretized_rate"))?;

    let mut table = Table::new(&["m", "value", "constraint_residual", "converged"]);
    for d in &disc {
        table.row([d.m.to_string(), fmt_f64(d.value), fmt_f64(d.constraint_residual), d.converged.to_string()]);
    }
    let pass = disc.iter().all(|d| d.converged && d.is_feasible());

    let mut result = json!({
        "endpoint": to_value(&g),
        "discretized": disc.iter().map(|d| json!({
            "m": d.m,
            "value": num(d.value),
            "constraint_residual": num(d.constraint_residual),
            "converged": d.converged,
            "outer_iterations": d.outer_iterations,
            "inner_iterations": d.inner_iterations,
            "final_rho": num(d.final_rho),
            "minimizer": d.minimizer.as_ref().map(|p| to_value(&p.segments)),
        })).collect::<Vec<_>>(),
    });

    let equal_rates = cfg.get("atoms").is_none() && cfg.parsed::<f64>("alpha")? == cfg.parsed::<f64>("beta")?;
    if equal_rates {
        let alpha: f64 = cfg.parsed("alpha")?;
        let closed = closed_form_rate_s2(&g, alpha).map_err(numeric("closed_form_rate_s2"))?;
        let quadrature = match optimal_path_s2(alpha, &g) {
            Ok(path) => Some(rate_along_path(&dist, &path, quad_nodes).map_err(numeric("rate_along_path"))?),
            Err(Error::Infeasible { .. }) => None,
            Err(e) => return Err(numeric("optimal_path_s2")(e)),
        };
        let finest = disc.last().map(|d| d.value);
        result["triple"] = json!({
            "closed_form": num(closed),
            "quadrature": quadrature.map(num).unwrap_or(Value::String("inf".into())),
            "discretized": opt_num(finest),
            "closed_form_minus_quadrature": opt_num(quadrature.map(|q| closed - q)),
        });
    }
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: pass, notes: vec![] })
}

fn mc_estimate(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let dist = cfg.distribution()?;
    let center = cfg.group_element("center")?;
    let radius = cfg.positive_f64("radius")?;
    let event = BallEvent::new(center, radius).map_err(numeric("mc_estimate"))?;
    let ns = cfg.usize_list("ns")?;
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::new("ns", "must be strictly increasing").into());
    }
    let samples = cfg.positive_usize("samples")?;
    let seed: u64 = cfg.parsed("seed")?;
    let shards = cfg.positive_usize("shards")?;
    let policy = match cfg.require("tilt")? {
        "none" => TiltPolicy::None,
        "auto" => TiltPolicy::Auto,
        _ => TiltPolicy::Fixed { lambda: cfg.algebra_vector("tilt")? },
    };
    let curve = empirical_rate_curve(&dist, &event, &ns, samples, seed, &policy, &McOptions { shards })
        .map_err(numeric("empirical_rate_curve"))?;

    let mut table = Table::new(&[
        "n", "samples", "hits", "p_hat", "p_lower", "p_upper", "rate", "rate_lower", "rate_upper", "ess", "degenerate_tilt",
    ]);
    for r in &curve.rows {
        table.row([
            r.n.to_string(),
            r.samples.to_string(),
            r.hits.to_string(),
            fmt_f64(r.p_hat),
            fmt_f64(r.p_lower),
            fmt_f64(r.p_upper),
            fmt_f64(r.rate),
            fmt_f64(r.rate_lower),
            fmt_f64(r.rate_upper),
            fmt_f64(r.ess),
            r.degenerate_tilt.to_string(),
        ]);
    }
    let pass = curve.rows.iter().all(|r| !r.degenerate_tilt);
    let result = json!({
        "tilt": curve.tilt.as_ref().map(to_value),
        "rows": curve.rows.iter().map(|r| json!({
            "n": r.n, "samples": r.samples, "hits": r.hits,
            "p_hat": num(r.p_hat), "p_lower": num(r.p_lower), "p_upper": num(r.p_upper),
            "rate": num(r.rate), "rate_lower": num(r.rate_lower), "rate_upper": num(r.rate_upper),
            "ess": num(r.ess), "degenerate_tilt": r.degenerate_tilt,
        })).collect::<Vec<_>>(),
        "non_increasing_within_intervals": curve.non_increasing_within_intervals(),
    });
    let notes = vec![(
        "finite_n",
        json!("finite-n estimates of -(1/n) log P; the large-deviation limit is not reached at these n and agreement tolerances are engineering choices"),
    )];
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: pass, notes })
}

fn verify_bounds(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let d = cfg.positive_usize("dim")?;
    let radius = cfg.positive_f64("radius")?;
    let pairs = cfg.positive_usize("pairs")?;
    let seed: u64 = cfg.parsed("seed")?;
    let rows = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let (x, y) = sample_pair(d, radius, s)?;
            let cert = verify_log_product(&x, &y)?;
            Ok((s, x.norm(), y.norm(), ad_norm(&x)?, cert))
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(numeric("verify_log_product"))?;

    let mut table = Table::new(&["seed", "norm_x", "norm_y", "ad_norm", "lhs", "rhs", "pass"]);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for (s, nx, ny, ad, c) in &rows {
        failures += usize::from(!c.pass);
        if c.rhs > 0.0 {
            worst = worst.max(c.lhs / c.rhs);
        }
        table.row([s.to_string(), fmt_f64(*nx), fmt_f64(*ny), fmt_f64(*ad), fmt_f64(c.lhs), fmt_f64(c.rhs), c.pass.to_string()]);
    }
    let mut rng = WalkRng::seed_from_u64(seed);
    let radius_check = validate_bch_radius(d, radius, 500, &mut rng).map_err(numeric("validate_bch_radius"))?;
    let result = json!({
        "dim": d,
        "radius": num(radius),
        "pairs": pairs,
        "failures": failures,
        "worst_ratio": num(worst),
        "radius_check": {
            "max_contraction": num(radius_check.max_contraction),
            "sqrt2_threshold": num(radius_check.sqrt2_threshold),
            "within_sqrt2": radius_check.within_sqrt2,
            "series_converges": radius_check.series_converges,
            "sqrt2_radius": num(radius_check.sqrt2_radius),
        },
    });
    let pass = failures == 0 && radius_check.series_converges;
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: pass, notes: vec![] })
}

fn exp_log_selftest(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let d = cfg.positive_usize("dim")?;
    if d < 2 {
        return Err(ConfigError::new("dim", "must be at least 2").into());
    }
    let radius = cfg.positive_f64("radius")?;
    let samples = cfg.positive_usize("samples")?;
    let seed: u64 = cfg.parsed("seed")?;
    let tol = cfg.positive_f64("tol")?;
    let mut rng = WalkRng::seed_from_u64(seed);
    let xs: Vec<AlgebraVector> = (0..samples).map(|_| random_algebra_vector(d, radius, &mut rng)).collect();
    let rows = xs
        .par_iter()
        .map(|x| {
            let g = exp_matrix(x)?;
            let back = log_matrix(&g)?;
            let again = exp_matrix(&back)?;
            Ok((x.norm(), back.sub(x).norm(), (again.matrix() - g.matrix()).norm()))
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(numeric("exp_log_round_trip"))?;

    let mut table = Table::new(&["index", "norm", "log_exp_error", "exp_log_error", "pass"]);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for (i, (nx, e1, e2)) in rows.iter().enumerate() {
        let ok = *e1 <= tol * (1.0 + nx) && *e2 <= tol * (1.0 + nx);
        failures += usize::from(!ok);
        worst = worst.max(e1.max(*e2));
        table.row([i.to_string(), fmt_f64(*nx), fmt_f64(*e1), fmt_f64(*e2), ok.to_string()]);
    }
    let inj = validate_injectivity(d, InjectivityRadius::default(), 200, &mut rng).map_err(numeric("validate_injectivity"))?;
    failures += usize::from(!inj.valid);
    let mut result = json!({
        "dim": d,
        "samples": samples,
        "failures": failures,
        "max_error": num(worst),
        "injectivity": {
            "eps": num(InjectivityRadius::default().eps),
            "r": num(InjectivityRadius::default().r),
            "max_log_norm": num(inj.max_log_norm),
            "max_round_trip": num(inj.max_round_trip),
            "valid": inj.valid,
        },
    });
    if d == 2 {
        let mut closed: f64 = 0.0;
        for rate in [0.5, 1.0, 2.0] {
            for t in [0.01, 0.1, 1.0] {
                let ea = exp_matrix(&lieldp::stochastic_group::generator_a(rate).scale(t)).map_err(numeric("exp_matrix"))?;
                let eb = exp_matrix(&lieldp::stochastic_group::generator_b(rate).scale(t)).map_err(numeric("exp_matrix"))?;
                closed = closed.max((ea.matrix() - exp_a_closed_form(rate, t)).amax());
                closed = closed.max((eb.matrix() - exp_b_closed_form(rate, t)).amax());
            }
        }
        failures += usize::from(closed > tol);
        result["closed_form_max_error"] = num(closed);
    }
    Ok(Outcome { result, csv: Some(table.into_bytes()), certificates_pass: failures == 0, notes: vec![] })
}
