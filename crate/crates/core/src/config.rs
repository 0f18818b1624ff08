//! Experiment configuration: a flat key-value (TOML) file whose keys mirror
//! [`ExperimentConfig`] field names, plus an optional `[cem]` table.
//! Unknown keys are rejected. Validation reports every violated field.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cem::CemConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Members share the simulator's equations and learn `(log m, log l)`.
    Physics,
    /// Gaussian MLP members predicting delta-state mean and variance.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// InfoNCE temperature. `inf` disables the contrastive term (plain PE).
    pub tau: f64,
    /// Target update rate.
    pub rho: f64,
    pub ensemble_size: usize,
    pub self_regularization: bool,
    pub model_update_frequency: usize,
    pub model_learning_rate: f64,
    pub model_batch_size: usize,
    /// Transitions per bootstrapped sub-dataset; unset means the current
    /// buffer size.
    pub bootstrap_samples: Option<usize>,
    /// Carried for completeness; the finite-horizon planner ignores it.
    pub discount: f64,
    pub max_training_steps: usize,
    pub episode_length: usize,
    /// Weight of the L2-norm baseline regularizer (0 disables it).
    pub l2_coefficient: f64,
    pub seed: u64,
    /// Replay capacity; unset means `max_training_steps`.
    pub buffer_capacity: Option<usize>,
    pub model: ModelKind,
    /// Physics members start log-uniform within `±init_spread` of nominal.
    pub init_spread: f64,
    /// Hidden width of both MLP layers.
    pub hidden_units: usize,
    /// Passes over each bootstrapped sub-dataset per model update event.
    pub model_epochs: usize,
    /// Draw fresh negatives for every minibatch (otherwise once per event).
    pub resample_negatives: bool,
    pub cem: CemConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tau: 1.0,
            rho: 0.5,
            ensemble_size: 9,
            self_regularization: true,
            model_update_frequency: 100,
            model_learning_rate: 1e-3,
            model_batch_size: 32,
            bootstrap_samples: None,
            discount: 0.99,
            max_training_steps: 500,
            episode_length: 100,
            l2_coefficient: 0.0,
            seed: 0,
            buffer_capacity: None,
            model: ModelKind::Physics,
            init_spread: 0.2,
            hidden_units: 64,
            model_epochs: 1,
            resample_negatives: true,
            cem: CemConfig::default(),
        }
    }
}

/// A configuration that passed [`validate_config`]. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(ExperimentConfig);

impl Deref for ValidatedConfig {
    type Target = ExperimentConfig;
    fn deref(&self) -> &ExperimentConfig {
        &self.0
    }
}

impl ValidatedConfig {
    pub fn into_inner(self) -> ExperimentConfig {
        self.0
    }

    pub fn buffer_capacity(&self) -> usize {
        self.0.buffer_capacity.unwrap_or(self.0.max_training_steps)
    }

    /// True when the contrastive term is switched off.
    pub fn is_plain_pe(&self) -> bool {
        self.0.tau.is_infinite()
    }
}

pub fn validate_config(cfg: ExperimentConfig) -> Result<ValidatedConfig> {
    let mut errs = Vec::new();
    let mut check = |ok: bool, msg: &str| {
        if !ok {
            errs.push(msg.to_string());
        }
    };
    check(cfg.tau > 0.0, "tau must be > 0");
    check((0.0..=1.0).contains(&cfg.rho), "rho must lie in [0,1]");
    check(cfg.ensemble_size >= 1, "ensemble_size must be ≥ 1");
    check(cfg.model_update_frequency >= 1, "model_update_frequency must be ≥ 1");
    check(
        cfg.model_learning_rate > 0.0 && cfg.model_learning_rate.is_finite(),
        "model_learning_rate must be a finite value > 0",
    );
    check(cfg.model_batch_size >= 1, "model_batch_size must be ≥ 1");
    check(
        cfg.bootstrap_samples != Some(0),
        "bootstrap_samples must be ≥ 1 when set",
    );
    check((0.0..=1.0).contains(&cfg.discount), "discount must lie in [0,1]");
    check(cfg.max_training_steps >= 1, "max_training_steps must be ≥ 1");
    check(cfg.episode_length >= 1, "episode_length must be ≥ 1");
    check(
        cfg.l2_coefficient >= 0.0 && cfg.l2_coefficient.is_finite(),
        "l2_coefficient must be a finite value ≥ 0",
    );
    check(cfg.buffer_capacity != Some(0), "buffer_capacity must be ≥ 1 when set");
    check(
        (0.0..1.0).contains(&cfg.init_spread),
        "init_spread must lie in [0,1)",
    );
    check(cfg.hidden_units >= 1, "hidden_units must be ≥ 1");
    check(cfg.model_epochs >= 1, "model_epochs must be ≥ 1");
    errs.extend(cfg.cem.violations().into_iter().map(|e| format!("cem.{e}")));

    if errs.is_empty() {
        Ok(ValidatedConfig(cfg))
    } else {
        Err(Error::InvalidConfig(errs))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration always serializes")
}

/// Applies `key=value` overrides. Keys under the `[cem]` table are written
/// `cem.horizon=10`. Values are parsed as TOML literals, falling back to a
/// bare string (so `model=mlp` works without quotes).
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| Error::ConfigParse(e.to_string()))?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::ConfigParse(format!("override `{ov}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = parse_override_value(raw);
        match key.split_once('.') {
            Some((outer, inner)) => {
                let sub = table
                    .entry(outer.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                match sub {
                    toml::Value::Table(t) => {
                        t.insert(inner.to_string(), value);
                    }
                    _ => {
                        return Err(Error::ConfigParse(format!("`{outer}` is not a table")));
                    }
                }
            }
            None => {
                table.insert(key.to_string(), value);
            }
        }
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
