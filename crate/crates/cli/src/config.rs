//! Run configuration: a TOML file plus `DECLAB_*` environment overrides.
//!
//! Overrides: `DECLAB_MODEL_ENDPOINT`, `DECLAB_MODEL_TOKEN`,
//! `DECLAB_AMATEUR_ENDPOINT`, `DECLAB_AMATEUR_TOKEN`,
//! `DECLAB_SCORER_<NAME>_ENDPOINT`, `DECLAB_SCORER_<NAME>_TOKEN` (NAME is the
//! metric name upper-cased with non-alphanumerics replaced by `_`),
//! `DECLAB_OUTPUT_DIR`, `DECLAB_SEED`, `DECLAB_WORKERS`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use declab_client::{RemoteModelConfig, RemoteScorerConfig};
use declab_core::decoding::{DETERMINISTIC_FAMILIES, STOCHASTIC_FAMILIES};
use declab_core::model::ToyModelSpec;
use declab_core::quality::NativeMetric;
use declab_core::uncertainty::UeMethod;
use declab_core::{ScoringPolicy, StrategyParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Task;

pub const ENV_PREFIX: &str = "DECLAB_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid environment override {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

fn default_seed() -> u64 {
    42
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("declab-out")
}
fn default_workers() -> usize {
    1
}
fn default_fraction() -> f64 {
    0.1
}
fn default_timeout() -> f64 {
    30.0
}
fn default_true() -> bool {
    true
}
fn default_families() -> Vec<String> {
    DETERMINISTIC_FAMILIES.iter().map(|s| s.to_string()).collect()
}
fn default_methods() -> Vec<UeMethod> {
    UeMethod::ALL.to_vec()
}
fn default_trials() -> usize {
    declab_core::eval::DEFAULT_BOOTSTRAP_TRIALS
}
fn default_in_flight() -> usize {
    4
}
fn default_batch() -> usize {
    32
}
fn default_dev_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fraction of work units allowed to fail before the run fails.
    #[serde(default = "default_fraction")]
    pub max_quarantine_fraction: f64,
    /// Fraction of dataset lines allowed to be malformed.
    #[serde(default = "default_fraction")]
    pub max_malformed_fraction: f64,
    pub model: ModelSource,
    #[serde(default)]
    pub amateur: Option<ModelSource>,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub strategies: StrategyGrid,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    /// External scorers keyed by metric name.
    #[serde(default)]
    pub scorers: BTreeMap<String, ScorerEndpoint>,
    /// Per-task prompt template overrides.
    #[serde(default)]
    pub templates: BTreeMap<Task, String>,
    /// Score native metrics against every reference and keep the best.
    #[serde(default)]
    pub multi_reference: bool,
}

/// Either an in-process toy model or a remote endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default)]
    pub toy: Option<ToyModelSpec>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub expected_vocab_size: Option<usize>,
    #[serde(default)]
    pub eos_id: Option<u32>,
    #[serde(default = "default_true")]
    pub concurrent: bool,
}

impl ModelSource {
    pub fn remote_config(&self) -> RemoteModelConfig {
        RemoteModelConfig {
            timeout: Duration::from_secs_f64(self.timeout_secs),
            expected_vocab_size: self.expected_vocab_size,
            eos_id: self.eos_id,
            concurrent: self.concurrent,
            token: self.token.clone(),
        }
    }

    fn problems(&self, what: &str, out: &mut Vec<String>) {
        match (&self.toy, &self.endpoint) {
            (Some(_), Some(_)) => out.push(format!("{what}: set either `toy` or `endpoint`, not both")),
            (None, None) => out.push(format!("{what}: one of `toy` or `endpoint` is required")),
            _ => {}
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            out.push(format!("{what}: timeout_secs must be positive"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Report label; defaults to the task name.
    #[serde(default)]
    pub name: Option<String>,
    pub task: Task,
    pub path: PathBuf,
    /// Quality metrics; defaults to the task's standard set.
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default)]
    pub max_new_tokens: Option<usize>,
}

impl DatasetConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.task.name().to_owned())
    }

    pub fn metrics(&self) -> Vec<String> {
        self.metrics.clone().unwrap_or_else(|| {
            self.task
                .default_metrics()
                .iter()
                .map(|s| s.to_string())
                .collect()
        })
    }

    pub fn max_new_tokens(&self) -> usize {
        self.max_new_tokens
            .unwrap_or_else(|| declab_core::decoding::default_max_new_tokens(self.task.name()))
    }
}

/// Strategy families expanded with their default grids, followed by any
/// explicitly listed settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyGrid {
    #[serde(default = "default_families")]
    pub families: Vec<String>,
    #[serde(default)]
    pub explicit: Vec<StrategyParams>,
}

impl Default for StrategyGrid {
    fn default() -> Self {
        Self {
            families: default_families(),
            explicit: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<UeMethod>,
    #[serde(default)]
    pub scoring_policy: ScoringPolicy,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            scoring_policy: ScoringPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Number of resamples; 0 disables the bootstrap.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Choose hyperparameters on the full item set.
    Full,
    /// Choose on a deterministic dev split, report on the rest.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_mode")]
    pub mode: SelectionMode,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
}

fn default_mode() -> SelectionMode {
    SelectionMode::Full
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Full,
            dev_fraction: default_dev_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerEndpoint {
    pub endpoint: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl ScorerEndpoint {
    pub fn remote_config(&self) -> RemoteScorerConfig {
        RemoteScorerConfig {
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_in_flight: self.max_in_flight,
            batch_size: self.batch_size,
            token: self.token.clone(),
        }
    }
}

/// Upper-cased metric name with non-alphanumerics replaced by `_`.
pub fn env_key(metric: &str) -> String {
    metric
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file, resolves dataset paths against its directory
    /// and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Applies `DECLAB_*` overrides from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let vars: BTreeMap<String, String> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        let get = |k: &str| vars.get(&format!("{ENV_PREFIX}{k}")).cloned();
        if let Some(e) = get("MODEL_ENDPOINT") {
            self.model.endpoint = Some(e);
            self.model.toy = None;
        }
        if let Some(t) = get("MODEL_TOKEN") {
            self.model.token = Some(t);
        }
        if let Some(e) = get("AMATEUR_ENDPOINT") {
            let am = self.amateur.get_or_insert_with(|| ModelSource {
                toy: None,
                endpoint: None,
                token: None,
                timeout_secs: default_timeout(),
                expected_vocab_size: None,
                eos_id: None,
                concurrent: true,
            });
            am.endpoint = Some(e);
            am.toy = None;
        }
        if let Some(t) = get("AMATEUR_TOKEN") {
            if let Some(am) = self.amateur.as_mut() {
                am.token = Some(t);
            }
        }
        if let Some(dir) = get("OUTPUT_DIR") {
            self.output_dir = PathBuf::from(dir);
        }
        let parse_num = |k: &str, v: String| -> Result<u64, ConfigError> {
            v.parse().map_err(|_| ConfigError::Env {
                var: format!("{ENV_PREFIX}{k}"),
                reason: format!("{v:?} is not a non-negative integer"),
            })
        };
        if let Some(s) = get("SEED") {
            self.seed = parse_num("SEED", s)?;
        }
        if let Some(w) = get("WORKERS") {
            self.workers = parse_num("WORKERS", w)? as usize;
        }
        // scorer endpoints: existing entries first, then new ones by metric
        let mut metrics: BTreeSet<String> = self.scorers.keys().cloned().collect();
        for d in &self.datasets {
            metrics.extend(d.metrics());
        }
        for m in metrics {
            let key = env_key(&m);
            if let Some(e) = get(&format!("SCORER_{key}_ENDPOINT")) {
                let entry = self.scorers.entry(m.clone()).or_insert_with(|| ScorerEndpoint {
                    endpoint: String::new(),
                    token: None,
                    max_in_flight: default_in_flight(),
                    batch_size: default_batch(),
                    timeout_secs: default_timeout(),
                });
                entry.endpoint = e;
            }
            if let Some(t) = get(&format!("SCORER_{key}_TOKEN")) {
                if let Some(entry) = self.scorers.get_mut(&m) {
                    entry.token = Some(t);
                }
            }
        }
        Ok(())
    }

    /// The strategy settings of the sweep, in order. Sampling strategies
    /// take the run seed.
    pub fn grid(&self) -> Vec<StrategyParams> {
        let mut out = Vec::new();
        for fam in &self.strategies.families {
            if let Some(g) = StrategyParams::default_grid(fam) {
                out.extend(g);
            }
        }
        out.extend(self.strategies.explicit.iter().cloned());
        for p in &mut out {
            match p {
                StrategyParams::Temperature(t) => t.seed = self.seed,
                StrategyParams::TopP(t) => t.seed = self.seed,
                _ => {}
            }
        }
        out
    }

    pub fn bootstrap_seed(&self) -> u64 {
        self.bootstrap.seed.unwrap_or(self.seed)
    }

    /// Checks everything that can be checked without touching the network
    /// or the datasets.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p = Vec::new();
        if self.workers == 0 {
            p.push("workers must be at least 1".into());
        }
        for (name, v) in [
            ("max_quarantine_fraction", self.max_quarantine_fraction),
            ("max_malformed_fraction", self.max_malformed_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                p.push(format!("{name} = {v} not in [0, 1]"));
            }
        }
        self.model.problems("model", &mut p);
        if let Some(a) = &self.amateur {
            a.problems("amateur", &mut p);
        }
        if self.datasets.is_empty() {
            p.push("at least one dataset is required".into());
        }
        let mut labels = BTreeSet::new();
        for d in &self.datasets {
            if !labels.insert(d.label()) {
                p.push(format!("dataset label {:?} used twice", d.label()));
            }
            if d.max_new_tokens == Some(0) {
                p.push(format!("dataset {}: max_new_tokens must be at least 1", d.label()));
            }
            let metrics = d.metrics();
            if metrics.is_empty() {
                p.push(format!("dataset {}: no quality metrics", d.label()));
            }
            for m in metrics {
                if NativeMetric::parse(&m).is_none() && !self.scorers.contains_key(&m) {
                    p.push(format!(
                        "dataset {}: metric {m:?} is neither native nor a configured scorer \
                         (set [scorers.\"{m}\"] or {ENV_PREFIX}SCORER_{}_ENDPOINT)",
                        d.label(),
                        env_key(&m)
                    ));
                }
            }
        }
        for (name, s) in &self.scorers {
            if s.endpoint.is_empty() {
                p.push(format!("scorer {name:?}: endpoint is empty"));
            }
            if s.max_in_flight == 0 || s.batch_size == 0 {
                p.push(format!("scorer {name:?}: max_in_flight and batch_size must be positive"));
            }
        }
        for fam in &self.strategies.families {
            if !DETERMINISTIC_FAMILIES.contains(&fam.as_str()) && !STOCHASTIC_FAMILIES.contains(&fam.as_str()) {
                p.push(format!("unknown strategy family {fam:?}"));
            }
        }
        let grid = self.grid();
        if grid.is_empty() {
            p.push("the strategy grid is empty".into());
        }
        for s in &grid {
            if let Err(e) = s.validate() {
                p.push(format!("strategy {} {}: {e}", s.id(), s.label()));
            }
            if matches!(s, StrategyParams::Cd(_)) && self.amateur.is_none() {
                p.push("contrastive decoding needs an [amateur] model".into());
                break;
            }
        }
        if self.uncertainty.methods.is_empty() {
            p.push("at least one uncertainty method is required".into());
        }
        if self.selection.mode == SelectionMode::Split
            && !(self.selection.dev_fraction > 0.0 && self.selection.dev_fraction < 1.0)
        {
            p.push("selection.dev_fraction must lie strictly between 0 and 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(p))
        }
    }
}
