//! Flat TOML experiment configuration.
//!
//! Only top-level scalars and arrays of scalars are accepted. A scalar given
//! for a per-user key (`mean_snr_db`, `concavity`) applies to every user.
//! `sweep_key` names any other key and `sweep_values` lists the values it
//! takes, one experiment per value.
//!
//! ```toml
//! users = 8
//! mean_snr_db = 10
//! concavity = 0.1
//! policy = "ts"
//! frames = 10000
//! sweep_key = "users"
//! sweep_values = [8, 16, 24, 32]
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use toml_edit::{Array, DocumentMut, Item, Value};

use crate::error::{ConfigError, Error, Result};
use crate::fairness::FairnessConfig;
use crate::sim::{ExperimentConfig, PolicySpec};

/// Keys understood by the parser, in the order manifests list them.
pub const KEYS: &[&str] = &[
    "users",
    "mean_snr_db",
    "snr_gap_db",
    "concavity",
    "power_budget",
    "policy",
    "alpha",
    "initial_rate",
    "delta",
    "max_iterations",
    "train_samples",
    "downlink",
    "slots",
    "feedback_bits",
    "weights",
    "frames",
    "seed",
    "tolerance",
    "step",
    "samples",
    "sweep_key",
    "sweep_values",
];

/// Keys written by the tool into manifests; accepted and ignored on input.
pub const MANIFEST_KEYS: &[&str] = &["command", "artifact_version", "output"];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Parsed but untyped assignments, remembering where each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    origin: String,
    entries: BTreeMap<String, Entry>,
    metadata: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn empty(origin: impl Into<String>) -> Self {
        Self { origin: origin.into(), entries: BTreeMap::new(), metadata: BTreeMap::new() }
    }

    pub fn parse(text: &str, origin: impl Into<String>) -> Result<Self> {
        let mut raw = Self::empty(origin);
        let line_of = |offset: usize| text[..offset.min(text.len())].matches('\n').count() + 1;
        let doc = toml_edit::Document::parse(text).map_err(|e| {
            let line = e.span().map(|span| line_of(span.start));
            raw.error(line, None, e.message().trim())
        })?;
        for (key, item) in doc.iter() {
            let line = doc.get_key_value(key).and_then(|(k, _)| k.span()).map(|span| line_of(span.start));
            let value = match item.as_value().map(flatten) {
                Some(Some(v)) => v,
                _ => return Err(raw.error(line, Some(key), "expected a scalar or an array of scalars")),
            };
            if MANIFEST_KEYS.contains(&key) {
                raw.metadata.insert(key.to_string(), value);
                continue;
            }
            if !KEYS.contains(&key) {
                return Err(raw.error(line, Some(key), "unknown key"));
            }
            raw.entries.insert(key.to_string(), Entry { value, line });
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(ConfigError {
                origin: path.display().to_string(),
                line: None,
                field: None,
                message: format!("cannot read config file: {e}"),
            })
        })?;
        Self::parse(&text, path.display().to_string())
    }

    /// Applies a `key=value` override from the command line.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::new("--set", None, None, format!("expected key=value, got `{assignment}`")).into());
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::new("--set", None, Some(key), "unknown key").into());
        }
        // TOML syntax is optional on the command line: `policy=gs` and
        // `mean_snr_db=0,10` work as well as `policy="gs"`
        let value = value.trim();
        let value = value.parse::<Value>().ok().and_then(|v| flatten(&v)).unwrap_or_else(|| value.to_string());
        self.entries.insert(key.to_string(), Entry { value, line: None });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Manifest metadata such as `command`.
    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    fn error(&self, line: Option<usize>, field: Option<&str>, message: &str) -> Error {
        ConfigError::new(&self.origin, line, field, message).into()
    }

    fn field_error(&self, key: &str, message: impl std::fmt::Display) -> Error {
        let line = self.entries.get(key).and_then(|e| e.line);
        let origin = if self.entries.get(key).is_some_and(|e| e.line.is_none()) { "--set" } else { &self.origin };
        ConfigError::new(origin, line, Some(key), message.to_string()).into()
    }

    fn scalar<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| self.field_error(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<f64>().map_err(|e| self.field_error(key, format!("cannot parse `{item}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn per_user(&self, key: &str, users: usize, default: f64) -> Result<Vec<f64>> {
        match self.list(key)? {
            None => Ok(vec![default; users]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; users]),
            Some(v) if v.len() == users => Ok(v),
            Some(v) => Err(self.field_error(key, format!("expected 1 or {users} values, got {}", v.len()))),
        }
    }

    /// Typed settings, applying defaults for missing keys.
    pub fn settings(&self) -> Result<Settings> {
        let users: usize = self.scalar("users", 8)?;
        if users == 0 {
            return Err(self.field_error("users", "must be at least 1"));
        }
        let policy_name = self.get("policy").unwrap_or("ts");
        if !POLICIES.contains(&policy_name) {
            return Err(self.field_error("policy", format!("unknown policy `{policy_name}`, expected one of {}", POLICIES.join(", "))));
        }
        let weights = match self.list("weights")? {
            Some(w) if w.len() != users => {
                return Err(self.field_error("weights", format!("expected {users} weights, got {}", w.len())))
            }
            other => other,
        };
        let downlink = match self.get("downlink") {
            None => false,
            Some("true") => true,
            Some("false") => false,
            Some(v) => return Err(self.field_error("downlink", format!("expected true or false, got `{v}`"))),
        };
        let settings = Settings {
            users,
            mean_snr_db: self.per_user("mean_snr_db", users, 10.0)?,
            snr_gap_db: self.scalar("snr_gap_db", 8.2)?,
            concavity: self.per_user("concavity", users, 0.1)?,
            power_budget: self.scalar("power_budget", 1.0)?,
            policy: policy_name.to_string(),
            alpha: self.scalar("alpha", 0.01)?,
            initial_rate: self.scalar("initial_rate", 0.0)?,
            delta: self.scalar("delta", 1e-6)?,
            max_iterations: self.scalar("max_iterations", 100)?,
            train_samples: self.scalar("train_samples", 10_000)?,
            downlink,
            slots: self.scalar("slots", 8)?,
            feedback_bits: self.scalar("feedback_bits", 3)?,
            weights,
            frames: self.scalar("frames", 10_000)?,
            seed: self.scalar("seed", 1)?,
            tolerance: self.scalar("tolerance", 1e-3)?,
            step: self.scalar("step", 0.5)?,
            samples: self.scalar("samples", 10_000)?,
        };
        if settings.frames == 0 {
            return Err(self.field_error("frames", "must be at least 1"));
        }
        self.check(&settings.experiment())?;
        Ok(settings)
    }

    /// Validates an experiment built from this config, pointing errors at
    /// the offending key.
    pub fn check(&self, experiment: &ExperimentConfig) -> Result<()> {
        experiment.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => self.field_error(name, reason),
            other => other,
        })
    }

    /// One raw config per sweep point (a single one without a sweep).
    pub fn expand(&self) -> Result<Vec<RawConfig>> {
        let (key, values) = match (self.get("sweep_key"), self.get("sweep_values")) {
            (None, None) => return Ok(vec![self.clone()]),
            (Some(k), Some(v)) => (k.to_string(), v.to_string()),
            (Some(_), None) => return Err(self.field_error("sweep_key", "sweep_values is missing")),
            (None, Some(_)) => return Err(self.field_error("sweep_values", "sweep_key is missing")),
        };
        if !KEYS.contains(&key.as_str()) || key.starts_with("sweep_") {
            return Err(self.field_error("sweep_key", format!("`{key}` cannot be swept")));
        }
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(self.field_error("sweep_values", "no values given"));
        }
        let line = self.entries["sweep_values"].line;
        Ok(values
            .into_iter()
            .map(|v| {
                let mut point = self.clone();
                point.entries.remove("sweep_key");
                point.entries.remove("sweep_values");
                point.entries.insert(key.clone(), Entry { value: v.to_string(), line });
                point
            })
            .collect())
    }

    /// Canonical TOML form listing every key actually set, in [`KEYS`]
    /// order, preceded by the given metadata.
    pub fn to_text(&self, metadata: &[(&str, String)]) -> String {
        let mut doc = DocumentMut::new();
        for (k, v) in metadata {
            doc.insert(k, Item::Value(Value::from(v.as_str())));
        }
        for key in KEYS {
            if let Some(e) = self.entries.get(*key) {
                doc.insert(key, Item::Value(typed(&e.value, LIST_KEYS.contains(key))));
            }
        }
        doc.to_string()
    }

    /// A copy with every setting spelled out, so the result does not depend
    /// on built-in defaults.
    pub fn resolved(&self) -> Result<RawConfig> {
        let mut out = self.clone();
        let points = self.expand()?;
        let s = points[0].settings()?;
        for (key, value) in s.pairs() {
            let swept = self.get("sweep_key") == Some(key);
            if !swept && !out.entries.contains_key(key) {
                out.entries.insert(key.to_string(), Entry { value, line: None });
            }
        }
        // every sweep point must be valid too
        for p in &points[1..] {
            p.settings()?;
        }
        Ok(out)
    }
}

pub const POLICIES: &[&str] = &["ts", "gs", "jtpc", "qtsl", "weighted-ts"];

/// Keys written back as arrays.
const LIST_KEYS: &[&str] = &["mean_snr_db", "concavity", "weights", "sweep_values"];

/// Text form of a TOML scalar, or of an array of scalars joined by `, `.
fn flatten(value: &Value) -> Option<String> {
    match value {
        Value::Array(items) => {
            items.iter().map(|v| if v.is_array() { None } else { flatten(v) }).collect::<Option<Vec<_>>>().map(|v| v.join(", "))
        }
        Value::String(s) => Some(s.value().clone()),
        Value::Integer(i) => Some(i.value().to_string()),
        Value::Float(f) => Some(f.value().to_string()),
        Value::Boolean(b) => Some(b.value().to_string()),
        _ => None,
    }
}

fn scalar_value(text: &str) -> Value {
    if let Ok(i) = text.parse::<i64>() {
        Value::from(i)
    } else if let Ok(f) = text.parse::<f64>() {
        Value::from(f)
    } else if let Ok(b) = text.parse::<bool>() {
        Value::from(b)
    } else {
        Value::from(text)
    }
}

/// Inverse of [`flatten`].
fn typed(text: &str, list: bool) -> Value {
    if list {
        let items: Array = text.split(',').map(|v| scalar_value(v.trim())).collect();
        if items.len() > 1 || text.contains(',') {
            return Value::Array(items);
        }
    }
    scalar_value(text)
}

/// Fully typed settings of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub users: usize,
    pub mean_snr_db: Vec<f64>,
    pub snr_gap_db: f64,
    pub concavity: Vec<f64>,
    pub power_budget: f64,
    pub policy: String,
    pub alpha: f64,
    pub initial_rate: f64,
    pub delta: f64,
    pub max_iterations: usize,
    pub train_samples: usize,
    pub downlink: bool,
    pub slots: usize,
    pub feedback_bits: u32,
    pub weights: Option<Vec<f64>>,
    pub frames: u64,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub samples: usize,
}

fn join(v: &[f64]) -> String {
    if v.iter().all(|x| *x == v[0]) {
        return v[0].to_string();
    }
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

impl Settings {
    pub fn policy_spec(&self, name: &str) -> PolicySpec {
        match name {
            "gs" => PolicySpec::Gs { alpha: self.alpha, initial_rate: self.initial_rate },
            "jtpc" => PolicySpec::Jtpc {
                delta: self.delta,
                max_iterations: self.max_iterations,
                train_samples: self.train_samples,
                downlink: self.downlink,
            },
            "qtsl" => PolicySpec::Qtsl { slots: self.slots, feedback_bits: self.feedback_bits },
            "weighted-ts" => {
                PolicySpec::WeightedTs { weights: self.weights.clone().unwrap_or_else(|| vec![1.0; self.users]) }
            }
            _ => PolicySpec::Ts,
        }
    }

    /// The experiment for the configured policy.
    pub fn experiment(&self) -> ExperimentConfig {
        self.experiment_with(&self.policy)
    }

    /// The same experiment under another policy, on the same frames.
    pub fn experiment_with(&self, policy: &str) -> ExperimentConfig {
        ExperimentConfig {
            mean_snr_db: self.mean_snr_db.clone(),
            snr_gap_db: self.snr_gap_db,
            concavity: self.concavity.clone(),
            power_budget: self.power_budget,
            policy: self.policy_spec(policy),
            frames: self.frames,
            seed: self.seed,
        }
    }

    pub fn fairness(&self) -> FairnessConfig {
        FairnessConfig {
            tolerance: self.tolerance,
            step: self.step,
            samples: self.samples,
            seed: self.seed,
            max_iterations: self.max_iterations,
        }
    }

    /// Every setting as text, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("users", self.users.to_string()),
            ("mean_snr_db", join(&self.mean_snr_db)),
            ("snr_gap_db", self.snr_gap_db.to_string()),
            ("concavity", join(&self.concavity)),
            ("power_budget", self.power_budget.to_string()),
            ("policy", self.policy.clone()),
            ("alpha", self.alpha.to_string()),
            ("initial_rate", self.initial_rate.to_string()),
            ("delta", self.delta.to_string()),
            ("max_iterations", self.max_iterations.to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("downlink", self.downlink.to_string()),
            ("slots", self.slots.to_string()),
            ("feedback_bits", self.feedback_bits.to_string()),
        ];
        if let Some(w) = &self.weights {
            out.push(("weights", w.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")));
        }
        out.extend([
            ("frames", self.frames.to_string()),
            ("seed", self.seed.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("step", self.step.to_string()),
            ("samples", self.samples.to_string()),
        ]);
        out
    }
}
