//! Flat `key = value` run configuration with section prefixes.
//!
//! Lines are `section.key = value`; `#` starts a comment. Command-line flags
//! and `--set key=value` override file values under the same names.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use difftsp_core::eval::Assumption;
use difftsp_core::sampling::{Resolution, SampleMode, SamplerConfig};
use difftsp_core::training::{ModelMode, TrainConfig};

/// Every accepted key with its default (`None` for required keys without a default).
const KEYS: &[(&str, Option<&str>)] = &[
    ("data.train", None),
    ("data.valid", None),
    ("data.test", None),
    ("data.cap", Some("256")),
    ("data.rho", Some("0.8")),
    ("data.n_s", Some("100")),
    ("out", Some("run")),
    ("seed", Some("0")),
    ("mode", Some("standard")),
    ("model.dim", Some("16")),
    ("model.blocks", Some("3")),
    ("model.rce_layers", Some("2")),
    ("diffusion.steps", Some("20")),
    ("train.lr", Some("0.001")),
    ("train.epochs", Some("50")),
    ("train.patience", Some("10")),
    ("train.weighted", Some("true")),
    ("sample.gamma", Some("0.999")),
    ("sample.resolution", Some("threshold")),
    ("sample.snapshot_steps", Some("")),
    ("eval.assumption", Some("cwa")),
    ("eval.similarity", Some("default")),
    ("eval.theta", Some("0.5")),
];

/// A configuration problem tied to the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    pub test_path: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub assumption: Assumption,
    /// `None` for the built-in profile similarity.
    pub similarity: Option<PathBuf>,
    pub theta: f64,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    /// Every effective value, one `key = value` line each, sorted by key.
    pub fn resolved(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses config text into raw key/value pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("line {}", no + 1), "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::new(key, "unknown key"));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parsed<T: FromStr>(raw: &BTreeMap<String, String>, key: &str) -> Result<T, ConfigError> {
    let v = &raw[key];
    v.parse().map_err(|_| ConfigError::new(key, format!("cannot parse {v:?}")))
}

fn existing_path(raw: &BTreeMap<String, String>, key: &str, check: bool) -> Result<PathBuf, ConfigError> {
    let v = raw.get(key).filter(|v| !v.is_empty()).ok_or_else(|| ConfigError::new(key, "required"))?;
    let p = PathBuf::from(v);
    if check && !p.is_file() {
        return Err(ConfigError::new(key, format!("file not found: {v}")));
    }
    Ok(p)
}

/// Builds a run configuration from file values plus overrides (overrides win).
/// `check_paths` verifies that referenced files exist.
pub fn resolve(
    file: BTreeMap<String, String>,
    overrides: &[(String, String)],
    check_paths: bool,
) -> Result<RunConfig, ConfigError> {
    let mut raw = file;
    for (k, v) in overrides {
        if !KEYS.iter().any(|(key, _)| key == k) {
            return Err(ConfigError::new(k.clone(), "unknown key"));
        }
        raw.insert(k.clone(), v.clone());
    }
    for (k, default) in KEYS {
        if let Some(d) = default {
            raw.entry(k.to_string()).or_insert_with(|| d.to_string());
        }
    }
    let train_path = existing_path(&raw, "data.train", check_paths)?;
    let valid_path = existing_path(&raw, "data.valid", check_paths)?;
    let test_path = existing_path(&raw, "data.test", check_paths)?;

    let (model_mode, sample_mode) = match raw["mode"].as_str() {
        "standard" => (ModelMode::Conditional, SampleMode::Standard),
        "repaint" => (ModelMode::Reconstruction, SampleMode::Repaint),
        other => return Err(ConfigError::new("mode", format!("expected standard or repaint, got {other:?}"))),
    };
    let train = TrainConfig {
        lr: parsed(&raw, "train.lr")?,
        epochs: parsed(&raw, "train.epochs")?,
        patience: parsed(&raw, "train.patience")?,
        seed: parsed(&raw, "seed")?,
        cap: parsed(&raw, "data.cap")?,
        rho: parsed(&raw, "data.rho")?,
        n_s: parsed(&raw, "data.n_s")?,
        steps: parsed(&raw, "diffusion.steps")?,
        gamma: parsed(&raw, "sample.gamma")?,
        dim: parsed(&raw, "model.dim")?,
        blocks: parsed(&raw, "model.blocks")?,
        rce_layers: parsed(&raw, "model.rce_layers")?,
        mode: model_mode,
        weighted: parsed(&raw, "train.weighted")?,
    };
    if let Err(e) = train.validate() {
        return Err(ConfigError::new("train", e.to_string()));
    }

    let resolution = match raw["sample.resolution"].as_str() {
        "threshold" => Resolution::Threshold,
        "bernoulli" => Resolution::Bernoulli,
        other => {
            return Err(ConfigError::new("sample.resolution", format!("expected threshold or bernoulli, got {other:?}")))
        }
    };
    let snapshot_steps = parse_steps(&raw["sample.snapshot_steps"])
        .ok_or_else(|| ConfigError::new("sample.snapshot_steps", "expected comma-separated integers"))?;
    let sampler = SamplerConfig { steps: train.steps, gamma: train.gamma, mode: sample_mode, resolution, snapshot_steps };
    if let Err(e) = sampler.validate() {
        return Err(ConfigError::new("sample", e.to_string()));
    }

    let assumption = match raw["eval.assumption"].as_str() {
        "cwa" => Assumption::Cwa,
        "rs-powa" => Assumption::RsPowa,
        other => return Err(ConfigError::new("eval.assumption", format!("expected cwa or rs-powa, got {other:?}"))),
    };
    let similarity = match raw["eval.similarity"].as_str() {
        "default" => None,
        path => {
            let p = PathBuf::from(path);
            if check_paths && !p.is_file() {
                return Err(ConfigError::new("eval.similarity", format!("file not found: {path}")));
            }
            Some(p)
        }
    };
    let theta: f64 = parsed(&raw, "eval.theta")?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(ConfigError::new("eval.theta", "must lie in [0, 1]"));
    }

    Ok(RunConfig {
        train_path,
        valid_path,
        test_path,
        out: PathBuf::from(&raw["out"]),
        train,
        sampler,
        assumption,
        similarity,
        theta,
        resolved: raw,
    })
}

fn parse_steps(text: &str) -> Option<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect()
}
