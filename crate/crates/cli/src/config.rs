//! Flat key-value experiment configuration: a TOML file of scalar keys
//! mirroring the hyperparameters plus the dataset path and ablation mode
//! flags. Unknown keys are rejected, and every run persists the fully
//! resolved configuration (defaults filled in) next to its outputs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fenrec_core::train::HyperParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<String>,
    pub hp: HyperParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            hp: HyperParams::default(),
        }
    }
}

/// Keys accepted in config files and `--set` overrides, in the order they
/// appear in the resolved dump.
pub const KEYS: [&str; 24] = [
    "dataset",
    "seed",
    "gamma",
    "lambda",
    "mu",
    "m",
    "tau1",
    "tau2",
    "alpha",
    "horizon",
    "warmup_epochs",
    "batch_size",
    "max_len",
    "dim",
    "dropout_rate",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "max_epochs",
    "patience",
    "soft_labels_enabled",
    "mixing_enabled",
    "upweighting_enabled",
];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = ExperimentConfig::default();
        let table: toml::Table = text
            .parse()
            .with_context(|| format!("parsing config {}", path.display()))?;
        for (key, value) in table {
            let rendered = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => bail!("config key `{key}`: unsupported value type {other:?}"),
            };
            config.set(&key, &rendered)?;
        }
        Ok(config)
    }

    /// Apply one `KEY=VALUE` override (the `--set` flag).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{assignment}`");
        };
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let hp = &mut self.hp;
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .with_context(|| format!("config key `{key}`: bad value `{value}`"))?
            };
        }
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "seed" => hp.seed = parse!(u64),
            "gamma" => hp.gamma = parse!(f64),
            "lambda" => hp.lambda = parse!(f64),
            "mu" => hp.mu = parse!(f64),
            "m" => hp.margin = parse!(f64),
            "tau1" => hp.tau1 = parse!(f64),
            "tau2" => hp.tau2 = parse!(f64),
            "alpha" => hp.alpha = parse!(f64),
            "horizon" => hp.future_items = parse!(usize),
            "warmup_epochs" => hp.warmup_epochs = parse!(usize),
            "batch_size" => hp.batch_size = parse!(usize),
            "max_len" => hp.max_len = parse!(usize),
            "dim" => hp.dim = parse!(usize),
            "dropout_rate" => hp.dropout_rate = parse!(f64),
            "learning_rate" => hp.learning_rate = parse!(f64),
            "adam_beta1" => hp.adam_beta1 = parse!(f64),
            "adam_beta2" => hp.adam_beta2 = parse!(f64),
            "adam_eps" => hp.adam_epsilon = parse!(f64),
            "max_epochs" => hp.max_epochs = parse!(usize),
            "patience" => hp.patience = parse!(usize),
            "soft_labels_enabled" => hp.soft_labels_enabled = parse!(bool),
            "mixing_enabled" => hp.mixing_enabled = parse!(bool),
            "upweighting_enabled" => hp.upweighting_enabled = parse!(bool),
            _ => bail!("unknown config key `{key}`; valid keys: {KEYS:?}"),
        }
        Ok(())
    }

    /// Fully resolved configuration as deterministic TOML (fixed key
    /// order, shortest round-trip float formatting). The output directory
    /// is deliberately not part of the config.
    pub fn to_resolved_toml(&self) -> String {
        let hp = &self.hp;
        let mut out = String::new();
        if let Some(dataset) = &self.dataset {
            let _ = writeln!(out, "dataset = {:?}", dataset);
        }
        let _ = writeln!(out, "seed = {}", hp.seed);
        let _ = writeln!(out, "gamma = {}", float_toml(hp.gamma));
        let _ = writeln!(out, "lambda = {}", float_toml(hp.lambda));
        let _ = writeln!(out, "mu = {}", float_toml(hp.mu));
        let _ = writeln!(out, "m = {}", float_toml(hp.margin));
        let _ = writeln!(out, "tau1 = {}", float_toml(hp.tau1));
        let _ = writeln!(out, "tau2 = {}", float_toml(hp.tau2));
        let _ = writeln!(out, "alpha = {}", float_toml(hp.alpha));
        let _ = writeln!(out, "horizon = {}", hp.future_items);
        let _ = writeln!(out, "warmup_epochs = {}", hp.warmup_epochs);
        let _ = writeln!(out, "batch_size = {}", hp.batch_size);
        let _ = writeln!(out, "max_len = {}", hp.max_len);
        let _ = writeln!(out, "dim = {}", hp.dim);
        let _ = writeln!(out, "dropout_rate = {}", float_toml(hp.dropout_rate));
        let _ = writeln!(out, "learning_rate = {}", float_toml(hp.learning_rate));
        let _ = writeln!(out, "adam_beta1 = {}", float_toml(hp.adam_beta1));
        let _ = writeln!(out, "adam_beta2 = {}", float_toml(hp.adam_beta2));
        let _ = writeln!(out, "adam_eps = {}", float_toml(hp.adam_epsilon));
        let _ = writeln!(out, "max_epochs = {}", hp.max_epochs);
        let _ = writeln!(out, "patience = {}", hp.patience);
        let _ = writeln!(out, "soft_labels_enabled = {}", hp.soft_labels_enabled);
        let _ = writeln!(out, "mixing_enabled = {}", hp.mixing_enabled);
        let _ = writeln!(out, "upweighting_enabled = {}", hp.upweighting_enabled);
        out
    }
}

/// TOML floats must carry a decimal point or exponent.
fn float_toml(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}
