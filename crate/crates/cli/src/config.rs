//! Problem configuration: flat `key = value` text with dotted keys, or the
//! same keys as JSON (flat or nested objects).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use qsd_core::coefficients::{GalleryModel, GalleryWeight, MODEL_NAMES, WEIGHT_NAMES};
use qsd_core::eigen::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use qsd_core::{BoxDomain, Grid};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A configuration problem, located by line when the input was key-value
/// text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(line: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Monte Carlo settings. Path counts and horizons of the individual checks
/// are separate so that cheap smoke configurations remain possible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSettings {
    pub seed: u64,
    pub dt: f64,
    pub boundary_safety: f64,
    pub exit_bridge: bool,
    /// Killed ensemble started from the quasistationary distribution.
    pub paths: usize,
    /// Paths per probe point for the survival-based `psi` estimate.
    pub probe_paths: usize,
    /// Killed ensemble for the conditioned histogram.
    pub histogram_paths: usize,
    /// Horizon of the single long controlled paths.
    pub horizon: f64,
    /// Controlled ensemble for the non-exit check.
    pub nonexit_paths: usize,
    pub nonexit_horizon: f64,
    /// Histogram bins per axis.
    pub bins: usize,
}

/// Estimator windows; `None` picks a default from the eigen solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSettings {
    pub fit_t0: f64,
    pub fit_t1: Option<f64>,
    pub t_eval: Option<f64>,
    pub snapshot_time: Option<f64>,
    pub burn_in: Option<f64>,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub model: String,
    pub model_params: Vec<(String, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grid: Vec<usize>,
    pub weight: String,
    pub weight_params: Vec<(String, f64)>,
    pub tol: f64,
    pub max_iter: usize,
    pub sim: SimSettings,
    pub estimate: EstimateSettings,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

/// Raw entries keyed by dotted name, with the line they came from.
type Entries = BTreeMap<String, (Option<usize>, String)>;

impl ProblemConfig {
    /// Reads a configuration file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new(
                None,
                "config",
                format!("cannot read {}: {e}", path.display()),
            )
        })?;
        Self::parse(&text)
    }

    /// Parses key-value text, or JSON when the first non-blank character is
    /// `{`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = if text.trim_start().starts_with('{') {
            parse_json(text)?
        } else {
            parse_flat(text)?
        };
        Self::from_entries(entries)
    }

    fn from_entries(mut e: Entries) -> Result<Self, ConfigError> {
        let (name_line, model) = e
            .remove("model.name")
            .ok_or_else(|| ConfigError::new(None, "model.name", "missing required field"))?;
        if !MODEL_NAMES.contains(&model.as_str()) {
            return Err(ConfigError::new(
                name_line,
                "model.name",
                format!(
                    "unknown model '{model}'; expected one of {}",
                    MODEL_NAMES.join(", ")
                ),
            ));
        }
        let weight = match e.remove("weight.name") {
            Some((line, w)) if !WEIGHT_NAMES.contains(&w.as_str()) => {
                return Err(ConfigError::new(
                    line,
                    "weight.name",
                    format!(
                        "unknown weight '{w}'; expected one of {}",
                        WEIGHT_NAMES.join(", ")
                    ),
                ))
            }
            Some((_, w)) => w,
            None => "one".to_string(),
        };

        let model_params = take_section(&mut e, "model.")?;
        let weight_params = take_section(&mut e, "weight.")?;
        let gallery = GalleryModel::from_spec(&model, &model_params)
            .map_err(|err| ConfigError::new(name_line, "model", err.to_string()))?;
        GalleryWeight::from_spec(&weight, &weight_params)
            .map_err(|err| ConfigError::new(None, "weight", err.to_string()))?;
        let dim = qsd_core::coefficients::CoefficientModel::dim(&gallery);

        let lower = take_list::<f64>(&mut e, "domain.lower")?.unwrap_or_else(|| vec![0.0; dim]);
        let upper = take_list::<f64>(&mut e, "domain.upper")?.unwrap_or_else(|| vec![1.0; dim]);
        for (field, v) in [("domain.lower", &lower), ("domain.upper", &upper)] {
            if v.len() != dim {
                return Err(ConfigError::new(
                    None,
                    field,
                    format!(
                        "model '{model}' is {dim}-dimensional, got {} bounds",
                        v.len()
                    ),
                ));
            }
        }
        let domain = BoxDomain::new(&lower, &upper)
            .map_err(|err| ConfigError::new(None, "domain", err.to_string()))?;
        let grid_line = e.get("grid.n").and_then(|(l, _)| *l);
        let mut grid = take_list::<usize>(&mut e, "grid.n")?
            .unwrap_or_else(|| vec![if dim == 1 { 1000 } else { 64 }]);
        if grid.len() == 1 && dim == 2 {
            grid.push(grid[0]);
        }
        if grid.len() != dim {
            return Err(ConfigError::new(
                grid_line,
                "grid.n",
                format!("expected 1 or {dim} values"),
            ));
        }
        Grid::new(domain, &grid)
            .map_err(|err| ConfigError::new(grid_line, "grid.n", err.to_string()))?;

        let default_sim = SimSettings {
            seed: 0,
            dt: 1e-3,
            boundary_safety: 0.02,
            exit_bridge: true,
            paths: 200_000,
            probe_paths: 20_000,
            histogram_paths: 1_000_000,
            horizon: 5000.0,
            nonexit_paths: 10_000,
            nonexit_horizon: 10.0,
            bins: 50,
        };
        let sim = SimSettings {
            seed: take(&mut e, "sim.seed")?.unwrap_or(default_sim.seed),
            dt: take_positive(&mut e, "sim.dt")?.unwrap_or(default_sim.dt),
            boundary_safety: take_in_unit(&mut e, "sim.boundary_safety")?
                .unwrap_or(default_sim.boundary_safety),
            exit_bridge: take(&mut e, "sim.exit_bridge")?.unwrap_or(default_sim.exit_bridge),
            paths: take_count(&mut e, "sim.paths")?.unwrap_or(default_sim.paths),
            probe_paths: take_count(&mut e, "sim.probe_paths")?.unwrap_or(default_sim.probe_paths),
            histogram_paths: take_count(&mut e, "sim.histogram_paths")?
                .unwrap_or(default_sim.histogram_paths),
            horizon: take_positive(&mut e, "sim.horizon")?.unwrap_or(default_sim.horizon),
            nonexit_paths: take_count(&mut e, "sim.nonexit_paths")?
                .unwrap_or(default_sim.nonexit_paths),
            nonexit_horizon: take_positive(&mut e, "sim.nonexit_horizon")?
                .unwrap_or(default_sim.nonexit_horizon),
            bins: take_count(&mut e, "sim.bins")?.unwrap_or(default_sim.bins),
        };
        let estimate = EstimateSettings {
            fit_t0: take::<f64>(&mut e, "estimate.fit_t0")?.unwrap_or(0.0),
            fit_t1: take_positive(&mut e, "estimate.fit_t1")?,
            t_eval: take_positive(&mut e, "estimate.t_eval")?,
            snapshot_time: take_positive(&mut e, "estimate.snapshot_time")?,
            burn_in: take::<f64>(&mut e, "estimate.burn_in")?,
            probes: take_count(&mut e, "estimate.probes")?.unwrap_or(9),
        };
        let tol = take_positive(&mut e, "solver.tol")?.unwrap_or(DEFAULT_TOL);
        let max_iter = take_count(&mut e, "solver.max_iter")?.unwrap_or(DEFAULT_MAX_ITER);
        let output = e.remove("output.dir").map(|(_, v)| PathBuf::from(v));

        if let Some((key, (line, _))) = e.into_iter().next() {
            return Err(ConfigError::new(line, &key, "unknown field"));
        }
        Ok(Self {
            model,
            model_params,
            lower,
            upper,
            grid,
            weight,
            weight_params,
            tol,
            max_iter,
            sim,
            estimate,
            output,
        })
    }

    pub fn gallery_model(&self) -> GalleryModel {
        GalleryModel::from_spec(&self.model, &self.model_params).expect("validated at parse time")
    }

    pub fn gallery_weight(&self) -> GalleryWeight {
        GalleryWeight::from_spec(&self.weight, &self.weight_params)
            .expect("validated at parse time")
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::new(&self.lower, &self.upper).expect("validated at parse time")
    }

    pub fn build_grid(&self) -> Grid {
        Grid::new(self.domain(), &self.grid).expect("validated at parse time")
    }

    /// Grid of the same box with `n` cells on every axis.
    pub fn grid_with(&self, n: usize) -> qsd_core::Result<Grid> {
        Grid::new(self.domain(), &vec![n; self.grid.len()])
    }

    /// SHA-256 of the canonical JSON form of the validated configuration,
    /// so that equivalent text and JSON inputs hash alike.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_flat(text: &str) -> Result<Entries, ConfigError> {
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::new(
                Some(line),
                content,
                "expected 'key = value'",
            ));
        };
        let key = key.trim();
        if key.is_empty() || !key.contains('.') {
            return Err(ConfigError::new(
                Some(line),
                key,
                "keys are dotted, e.g. 'model.name'",
            ));
        }
        if out
            .insert(key.to_string(), (Some(line), value.trim().to_string()))
            .is_some()
        {
            return Err(ConfigError::new(Some(line), key, "duplicate key"));
        }
    }
    Ok(out)
}

fn parse_json(text: &str) -> Result<Entries, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new(Some(e.line()), "json", e.to_string()))?;
    let mut out = Entries::new();
    flatten("", &value, &mut out)?;
    Ok(out)
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Entries) -> Result<(), ConfigError> {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(scalar_text)
                .collect::<Option<_>>()
                .ok_or_else(|| {
                    ConfigError::new(
                        None,
                        prefix,
                        "arrays may only hold numbers, strings or booleans",
                    )
                })?;
            out.insert(prefix.to_string(), (None, parts.join(",")));
        }
        other => {
            let text = scalar_text(other)
                .ok_or_else(|| ConfigError::new(None, prefix, "null is not a value"))?;
            if prefix.is_empty() || !prefix.contains('.') {
                return Err(ConfigError::new(
                    None,
                    prefix,
                    "keys are dotted, e.g. 'model.name'",
                ));
            }
            out.insert(prefix.to_string(), (None, text));
        }
    }
    Ok(())
}

fn scalar_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Removes `prefix.*` entries other than `prefix.name` as numeric
/// parameters, sorted by key.
fn take_section(e: &mut Entries, prefix: &str) -> Result<Vec<(String, f64)>, ConfigError> {
    let keys: Vec<String> = e
        .keys()
        .filter(|k| k.starts_with(prefix))
        .cloned()
        .collect();
    let mut out = Vec::new();
    for key in keys {
        let (line, v) = e.remove(&key).expect("key listed above");
        let value: f64 = v
            .parse()
            .map_err(|_| ConfigError::new(line, &key, format!("expected a number, got '{v}'")))?;
        out.push((key[prefix.len()..].to_string(), value));
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(e: &mut Entries, key: &str) -> Result<Option<T>, ConfigError> {
    match e.remove(key) {
        None => Ok(None),
        Some((line, v)) => v
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::new(line, key, format!("cannot parse '{v}'"))),
    }
}

fn take_positive(e: &mut Entries, key: &str) -> Result<Option<f64>, ConfigError> {
    let line = e.get(key).and_then(|(l, _)| *l);
    match take::<f64>(e, key)? {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(ConfigError::new(
            line,
            key,
            format!("must be positive, got {v}"),
        )),
        other => Ok(other),
    }
}

fn take_in_unit(e: &mut Entries, key: &str) -> Result<Option<f64>, ConfigError> {
    let line = e.get(key).and_then(|(l, _)| *l);
    match take::<f64>(e, key)? {
        Some(v) if !(v > 0.0 && v < 1.0) => Err(ConfigError::new(
            line,
            key,
            format!("must lie in (0, 1), got {v}"),
        )),
        other => Ok(other),
    }
}

fn take_count(e: &mut Entries, key: &str) -> Result<Option<usize>, ConfigError> {
    let line = e.get(key).and_then(|(l, _)| *l);
    let Some((_, raw)) = e.get(key).cloned() else {
        return Ok(None);
    };
    e.remove(key);
    // Accept `2e5` style counts.
    let v: f64 = raw.parse().map_err(|_| {
        ConfigError::new(
            line,
            key,
            format!("expected a positive integer, got '{raw}'"),
        )
    })?;
    if !(v >= 1.0 && v.fract() == 0.0 && v < 1e15) {
        return Err(ConfigError::new(
            line,
            key,
            format!("expected a positive integer, got '{raw}'"),
        ));
    }
    Ok(Some(v as usize))
}

fn take_list<T: std::str::FromStr>(
    e: &mut Entries,
    key: &str,
) -> Result<Option<Vec<T>>, ConfigError> {
    match e.remove(key) {
        None => Ok(None),
        Some((line, v)) => v
            .split(',')
            .map(|p| p.trim().parse::<T>())
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|_| ConfigError::new(line, key, format!("cannot parse list '{v}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "model.name = bm1d_drift\nmodel.m = 1\ngrid.n = 200\n";

    #[test]
    fn flat_defaults() {
        let c = ProblemConfig::parse(BASIC).unwrap();
        assert_eq!(c.model, "bm1d_drift");
        assert_eq!(c.model_params, vec![("m".to_string(), 1.0)]);
        assert_eq!(c.lower, vec![0.0]);
        assert_eq!(c.upper, vec![1.0]);
        assert_eq!(c.grid, vec![200]);
        assert_eq!(c.weight, "one");
        assert_eq!(c.sim.paths, 200_000);
        assert_eq!(c.estimate.probes, 9);
    }

    #[test]
    fn json_matches_flat_and_hash() {
        let json = r#"{"model": {"name": "bm1d_drift", "m": 1}, "grid": {"n": 200}}"#;
        let a = ProblemConfig::parse(BASIC).unwrap();
        let b = ProblemConfig::parse(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_model_name_names_field() {
        let err = ProblemConfig::parse("grid.n = 10\n").unwrap_err();
        assert_eq!(err.field, "model.name");
    }

    #[test]
    fn errors_carry_lines() {
        let err = ProblemConfig::parse("model.name = bm1d_drift\n\ngrid.n = ten\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "grid.n");
        let err = ProblemConfig::parse("model.name = bm1d_drift\nsim.colour = red\n").unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (Some(2), "sim.colour"));
        let err = ProblemConfig::parse("model.name = nope\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        let err = ProblemConfig::parse("model.name = bm1d_drift\nmodel.q = 1\n").unwrap_err();
        assert!(err.message.contains("'q'"));
        let err = ProblemConfig::parse("model.name = bm1d_drift\nsim.dt = -1\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn two_dimensional_grid_expands() {
        let c = ProblemConfig::parse("model.name = drift2d\ngrid.n = 16\n").unwrap();
        assert_eq!(c.grid, vec![16, 16]);
        assert!(ProblemConfig::parse("model.name = drift2d\ngrid.n = 16,8,4\n").is_err());
    }

    #[test]
    fn counts_accept_exponent_notation() {
        let c = ProblemConfig::parse("model.name = bm1d_drift\nsim.paths = 2e5\n").unwrap();
        assert_eq!(c.sim.paths, 200_000);
        assert!(ProblemConfig::parse("model.name = bm1d_drift\nsim.paths = 1.5\n").is_err());
    }
}
