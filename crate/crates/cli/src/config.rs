//! Flat `key = value` experiment configuration. Matrices and atom lists are
//! JSON values; everything else is a scalar or a comma-separated list.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use lieldp::{AlgebraVector, GroupElement, IncrementDistribution};

/// Every key the runner understands, with a one-line meaning.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("command", "subcommand name"),
    ("alpha", "rate of the first two-state generator"),
    ("beta", "rate of the second two-state generator"),
    ("dim", "matrix dimension d"),
    ("atoms", "JSON list of {weight, vector} increments (overrides alpha/beta)"),
    ("seed", "base RNG seed"),
    ("out", "output directory"),
    ("workers", "worker threads (default from LIELDP_WORKERS)"),
    ("strict", "exit 2 on any failed certificate"),
    ("n", "walk length"),
    ("m", "segment count for simulate; comma list for rate"),
    ("x", "JSON algebra matrix for legendre"),
    ("x1", "first coordinate of a 2x2 algebra point"),
    ("x2", "second coordinate of a 2x2 algebra point"),
    ("grid_x1", "lo,hi,count for a legendre grid"),
    ("grid_x2", "lo,hi,count for a legendre grid"),
    ("endpoint", "JSON group matrix, or a path to a JSON file"),
    ("quad_nodes", "Gauss-Legendre nodes per panel"),
    ("grad_tol", "inner gradient tolerance of the rate solver"),
    ("constraint_tol", "endpoint residual tolerance of the rate solver"),
    ("center", "JSON group matrix (or file) for the ball centre"),
    ("radius", "ball radius / sampling radius"),
    ("ns", "comma list of walk lengths"),
    ("samples", "sample count"),
    ("tilt", "none | auto | JSON algebra matrix"),
    ("shards", "independent RNG streams per estimate"),
    ("pairs", "number of sampled pairs"),
    ("tol", "round-trip tolerance for exp-log-selftest"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

/// Resolved configuration. Keys are stored sorted so the text form is canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut cfg = ExperimentConfig::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", no + 1), "expected `key = value`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> ConfigResult<()> {
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::new(key, "unknown key"));
        }
        let value = value.into();
        if value.contains('\n') {
            return Err(ConfigError::new(key, "values must fit on one line"));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    /// Sets `key` only when absent.
    pub fn set_default(&mut self, key: &str, value: impl ToString) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    /// Overlays `other`, whose values win.
    pub fn merge(&mut self, other: &ExperimentConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn require(&self, key: &str) -> ConfigResult<&str> {
        self.get(key).ok_or_else(|| ConfigError::new(key, "required but not set"))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> ConfigResult<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|e| ConfigError::new(key, format!("cannot parse `{raw}`: {e}")))
    }

    pub fn parsed_opt<T: FromStr>(&self, key: &str) -> ConfigResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parsed(key).map(Some),
        }
    }

    pub fn positive_usize(&self, key: &str) -> ConfigResult<usize> {
        let v: usize = self.parsed(key)?;
        if v == 0 {
            return Err(ConfigError::new(key, "must be at least 1"));
        }
        Ok(v)
    }

    pub fn positive_f64(&self, key: &str) -> ConfigResult<f64> {
        let v: f64 = self.parsed(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::new(key, format!("must be a positive finite number, got {v}")));
        }
        Ok(v)
    }

    pub fn flag(&self, key: &str) -> ConfigResult<bool> {
        match self.get(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(other) => Err(ConfigError::new(key, format!("expected true/false, got `{other}`"))),
        }
    }

    pub fn usize_list(&self, key: &str) -> ConfigResult<Vec<usize>> {
        let raw = self.require(key)?;
        let out = raw
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| ConfigError::new(key, format!("`{s}`: {e}"))))
            .collect::<ConfigResult<Vec<_>>>()?;
        if out.is_empty() || out.contains(&0) {
            return Err(ConfigError::new(key, "needs one or more positive integers"));
        }
        Ok(out)
    }

    /// `lo,hi,count` grid.
    pub fn grid(&self, key: &str) -> ConfigResult<Option<(f64, f64, usize)>> {
        let Some(raw) = self.get(key) else { return Ok(None) };
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        let bad = || ConfigError::new(key, format!("expected lo,hi,count, got `{raw}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        if count == 0 || lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(bad());
        }
        Ok(Some((lo, hi, count)))
    }

    /// Inline JSON, or the contents of the file the value names.
    fn json_source(&self, key: &str) -> ConfigResult<String> {
        let raw = self.require(key)?;
        if raw.trim_start().starts_with('[') || raw.trim_start().starts_with('{') {
            Ok(raw.to_string())
        } else {
            std::fs::read_to_string(raw).map_err(|e| ConfigError::new(key, format!("cannot read `{raw}`: {e}")))
        }
    }

    pub fn group_element(&self, key: &str) -> ConfigResult<GroupElement> {
        let src = self.json_source(key)?;
        serde_json::from_str(&src).map_err(|e| ConfigError::new(key, e.to_string()))
    }

    pub fn algebra_vector(&self, key: &str) -> ConfigResult<AlgebraVector> {
        let src = self.json_source(key)?;
        serde_json::from_str(&src).map_err(|e| ConfigError::new(key, e.to_string()))
    }

    pub fn distribution(&self) -> ConfigResult<IncrementDistribution> {
        if self.get("atoms").is_some() {
            let src = self.json_source("atoms")?;
            return serde_json::from_str(&src).map_err(|e| ConfigError::new("atoms", e.to_string()));
        }
        let model = self.example_model()?;
        if let Some(d) = self.parsed_opt::<usize>("dim")? {
            if d != 2 {
                return Err(ConfigError::new("dim", "the alpha/beta model is 2x2; give `atoms` for other dimensions"));
            }
        }
        Ok(model.distribution())
    }

    pub fn example_model(&self) -> ConfigResult<lieldp::ExampleModel> {
        let alpha = self.positive_f64("alpha")?;
        let beta = self.positive_f64("beta")?;
        lieldp::ExampleModel::new(alpha, beta).map_err(|e| ConfigError::new("alpha", e.to_string()))
    }
}
