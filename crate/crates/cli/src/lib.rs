//! Experiment runner for `lieldp`.
//!
//! Configuration comes from an optional `key = value` file, overlaid by
//! `--set key=value` pairs and then by dedicated flags. The fully resolved
//! configuration is echoed into every JSON output.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use commands::{apply_defaults, dispatch, module_of, Failure, Outcome};
use config::{ConfigError, ExperimentConfig};
use output::{json_bytes, sha256_hex, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CERTIFICATE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Default worker count when neither `--workers` nor the config sets one.
pub const WORKERS_ENV: &str = "LIELDP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "lieldp", version, about = "Large-deviation experiments for random walks on stochastic matrix groups")]
pub struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Exit with status 2 if any certificate fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Extra `key=value` override (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<String>,
    /// JSON list of `{weight, vector}` atoms, or a file holding it.
    #[arg(long)]
    pub atoms: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one walk and certify the replacement-sum bound.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        m: Option<String>,
    },
    /// Evaluate the Legendre transform at a point or on a grid.
    Legendre {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        x1: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        x2: Option<String>,
        #[arg(long = "grid-x1", allow_hyphen_values = true)]
        grid_x1: Option<String>,
        #[arg(long = "grid-x2", allow_hyphen_values = true)]
        grid_x2: Option<String>,
    },
    /// Discretized, path and closed-form rate values at an endpoint.
    Rate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        m: Option<String>,
        #[arg(long = "quad-nodes")]
        quad_nodes: Option<String>,
        #[arg(long = "grad-tol")]
        grad_tol: Option<String>,
        #[arg(long = "constraint-tol")]
        constraint_tol: Option<String>,
    },
    /// Monte Carlo rate curve for a ball event.
    #[command(name = "mc-estimate")]
    McEstimate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        center: Option<String>,
        #[arg(long)]
        radius: Option<String>,
        #[arg(long)]
        ns: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        tilt: Option<String>,
        #[arg(long)]
        shards: Option<String>,
    },
    /// Check the log-product bound on random pairs.
    #[command(name = "verify-bounds")]
    VerifyBounds {
        #[arg(long)]
        dim: Option<String>,
        #[arg(long)]
        radius: Option<String>,
        #[arg(long)]
        pairs: Option<String>,
    },
    /// Round-trip exp and log on random algebra elements.
    #[command(name = "exp-log-selftest")]
    ExpLogSelftest {
        #[arg(long)]
        dim: Option<String>,
        #[arg(long)]
        radius: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        tol: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Legendre { .. } => "legendre",
            Command::Rate { .. } => "rate",
            Command::McEstimate { .. } => "mc-estimate",
            Command::VerifyBounds { .. } => "verify-bounds",
            Command::ExpLogSelftest { .. } => "exp-log-selftest",
        }
    }

    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        fn model(m: &ModelArgs) -> Vec<(&'static str, &Option<String>)> {
            vec![("alpha", &m.alpha), ("beta", &m.beta), ("atoms", &m.atoms)]
        }
        match self {
            Command::Simulate { model: md, n, m } => [model(md), vec![("n", n), ("m", m)]].concat(),
            Command::Legendre { model: md, x, x1, x2, grid_x1, grid_x2 } => {
                [model(md), vec![("x", x), ("x1", x1), ("x2", x2), ("grid_x1", grid_x1), ("grid_x2", grid_x2)]].concat()
            }
            Command::Rate { model: md, endpoint, m, quad_nodes, grad_tol, constraint_tol } => [
                model(md),
                vec![
                    ("endpoint", endpoint),
                    ("m", m),
                    ("quad_nodes", quad_nodes),
                    ("grad_tol", grad_tol),
                    ("constraint_tol", constraint_tol),
                ],
            ]
            .concat(),
            Command::McEstimate { model: md, center, radius, ns, samples, tilt, shards } => [
                model(md),
                vec![
                    ("center", center),
                    ("radius", radius),
                    ("ns", ns),
                    ("samples", samples),
                    ("tilt", tilt),
                    ("shards", shards),
                ],
            ]
            .concat(),
            Command::VerifyBounds { dim, radius, pairs } => vec![("dim", dim), ("radius", radius), ("pairs", pairs)],
            Command::ExpLogSelftest { dim, radius, samples, tol } => {
                vec![("dim", dim), ("radius", radius), ("samples", samples), ("tol", tol)]
            }
        }
    }
}

/// File, then `--set`, then flags; finally command defaults.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(),
    };
    let mut over = ExperimentConfig::new();
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::new("set", format!("expected KEY=VALUE, got `{kv}`")))?;
        over.set(k.trim(), v.trim())?;
    }
    let globals = [("out", &cli.out), ("seed", &cli.seed), ("workers", &cli.workers)];
    for (k, v) in globals.into_iter().chain(cli.command.overrides()) {
        if let Some(v) = v {
            over.set(k, v.clone())?;
        }
    }
    if cli.strict {
        over.set("strict", "true")?;
    }
    cfg.merge(&over);
    if let Some(file_cmd) = cfg.get("command") {
        if file_cmd != cli.command.name() {
            return Err(ConfigError::new(
                "command",
                format!("config is for `{file_cmd}` but `{}` was requested", cli.command.name()),
            ));
        }
    }
    cfg.set("command", cli.command.name())?;
    if cfg.get("workers").is_none() {
        if let Ok(w) = std::env::var(WORKERS_ENV) {
            cfg.set("workers", w)?;
        }
    }
    apply_defaults(cli.command.name(), &mut cfg);
    Ok(cfg)
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("unix:{secs}")
}

fn config_value(cfg: &ExperimentConfig) -> Value {
    Value::Object(cfg.entries().iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect::<Map<_, _>>())
}

fn write_outputs(command: &str, cfg: &ExperimentConfig, out: &Outcome) -> std::io::Result<(PathBuf, Option<PathBuf>)> {
    let dir = Path::new(cfg.get("out").unwrap_or("."));
    let mut metadata = Map::new();
    metadata.insert("timestamp".into(), Value::String(timestamp()));
    for (k, v) in &out.notes {
        metadata.insert((*k).into(), v.clone());
    }
    let doc = json!({
        "command": command,
        "config": config_value(cfg),
        "certificates_pass": out.certificates_pass,
        "result": out.result,
        "metadata": metadata,
    });
    let json_path = dir.join(format!("{command}.json"));
    write_atomic(&json_path, &json_bytes(&doc))?;
    let csv_path = match &out.csv {
        Some(bytes) => {
            let p = dir.join(format!("{command}.csv"));
            write_atomic(&p, bytes)?;
            Some(p)
        }
        None => None,
    };
    Ok((json_path, csv_path))
}

fn write_diagnostic(command: &str, cfg: &ExperimentConfig, operation: &str, error: &lieldp::Error) -> Option<PathBuf> {
    let doc = json!({
        "module": module_of(command),
        "operation": operation,
        "error": error.to_string(),
        "inputs_digest": sha256_hex(cfg.to_text().as_bytes()),
        "config": config_value(cfg),
    });
    let path = Path::new(cfg.get("out").unwrap_or(".")).join("diagnostic.json");
    eprintln!("{}", serde_json::to_string(&doc).expect("serializable"));
    write_atomic(&path, &json_bytes(&doc)).ok().map(|_| path)
}

fn run_resolved(cfg: &ExperimentConfig) -> i32 {
    let command = cfg.get("command").unwrap_or_default().to_string();
    let strict = match cfg.flag("strict") {
        Ok(s) => s,
        Err(e) => return usage(&e),
    };
    let workers = match cfg.parsed_opt::<usize>("workers") {
        Ok(w) => w,
        Err(e) => return usage(&e),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => return usage(&ConfigError::new("workers", e.to_string())),
    };
    match pool.install(|| dispatch(&command, cfg)) {
        Ok(out) => match write_outputs(&command, cfg, &out) {
            Ok((json_path, csv_path)) => {
                println!("{}", json_path.display());
                if let Some(p) = csv_path {
                    println!("{}", p.display());
                }
                if strict && !out.certificates_pass {
                    eprintln!("certificate failure ({command})");
                    EXIT_CERTIFICATE
                } else {
                    EXIT_OK
                }
            }
            Err(e) => {
                eprintln!("cannot write outputs: {e}");
                EXIT_USAGE
            }
        },
        Err(Failure::Usage(e)) => usage(&e),
        Err(Failure::Numeric { operation, error }) => {
            write_diagnostic(&command, cfg, &operation, &error);
            EXIT_NUMERIC
        }
    }
}

fn usage(e: &ConfigError) -> i32 {
    eprintln!("usage error: {e}");
    EXIT_USAGE
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match resolve_config(&cli) {
        Ok(cfg) => run_resolved(&cfg),
        Err(e) => usage(&e),
    }
}

/// Runs a fully specified configuration (must contain `command`).
pub fn run_config(cfg: &ExperimentConfig) -> i32 {
    let Some(command) = cfg.get("command").map(str::to_string) else {
        return usage(&ConfigError::new("command", "required but not set"));
    };
    let mut cfg = cfg.clone();
    apply_defaults(&command, &mut cfg);
    run_resolved(&cfg)
}
