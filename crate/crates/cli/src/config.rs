//! Flat `key = value` experiment configuration.
//!
//! Lines hold one assignment each, `#` starts a comment, and list values are
//! comma separated. Harvest outcomes are `amount:probability` pairs. Unknown,
//! duplicate, and malformed keys are rejected by name so a config typo never
//! silently falls back to a default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use ehn_core::{LossLimit, ModelParams, ParamsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required keys: {}", keys.join(", "))]
    MissingKeys { keys: Vec<String> },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    NotAnAssignment { line: usize, text: String },
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error(transparent)]
    Model(#[from] ParamsError),
}

/// Model parameters plus run controls.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub slots: u64,
    pub warmup_slots: u64,
    pub seed: u64,
    /// HP-weight grid for `sweep-weight` (LP weight is one minus the point).
    pub sweep_weights: Vec<f64>,
    /// Bernoulli arrival-rate grid for `sweep-arrival`.
    pub sweep_arrivals: Vec<f64>,
    pub out_dir: PathBuf,
}

const REQUIRED_KEYS: [&str; 12] = [
    "e_max",
    "q_lp_max",
    "q_hp_max",
    "k_tx",
    "mu",
    "harvest",
    "arrival_lp",
    "arrival_hp",
    "weight_lp",
    "weight_hp",
    "loss_limit_lp",
    "loss_limit_hp",
];

const OPTIONAL_KEYS: [&str; 6] = [
    "slots",
    "warmup_slots",
    "seed",
    "sweep_weights",
    "sweep_arrivals",
    "out_dir",
];

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_u32(key: &str, value: &str) -> Result<u32, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("`{value}` is not a nonnegative integer")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("`{value}` is not a nonnegative integer")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("`{value}` is not a number")))
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_f64(key, item.trim()))
        .collect()
}

fn parse_harvest(key: &str, value: &str) -> Result<Vec<(u32, f64)>, ConfigError> {
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (w, p) = item
                .split_once(':')
                .ok_or_else(|| bad(key, format!("`{item}` is not an `amount:probability` pair")))?;
            Ok((parse_u32(key, w.trim())?, parse_f64(key, p.trim())?))
        })
        .collect()
}

fn parse_loss_limit(key: &str, value: &str) -> Result<LossLimit, ConfigError> {
    if value == "unbounded" {
        Ok(LossLimit::Unbounded)
    } else {
        Ok(LossLimit::Bounded(parse_f64(key, value)?))
    }
}

/// Parse and validate a configuration file's contents.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::NotAnAssignment {
                line,
                text: content.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key });
        }
        if seen.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey { line, key });
        }
    }

    let missing: Vec<String> = REQUIRED_KEYS
        .iter()
        .filter(|k| !seen.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingKeys { keys: missing });
    }

    let get = |key: &str| seen.get(key).unwrap().as_str();

    let params = ModelParams {
        e_max: parse_u32("e_max", get("e_max"))?,
        q_lp_max: parse_u32("q_lp_max", get("q_lp_max"))?,
        q_hp_max: parse_u32("q_hp_max", get("q_hp_max"))?,
        k_tx: parse_u32("k_tx", get("k_tx"))?,
        mu: parse_f64("mu", get("mu"))?,
        harvest_dist: parse_harvest("harvest", get("harvest"))?,
        arrival_lp: parse_f64_list("arrival_lp", get("arrival_lp"))?,
        arrival_hp: parse_f64_list("arrival_hp", get("arrival_hp"))?,
        weight_lp: parse_f64("weight_lp", get("weight_lp"))?,
        weight_hp: parse_f64("weight_hp", get("weight_hp"))?,
        loss_limit_lp: parse_loss_limit("loss_limit_lp", get("loss_limit_lp"))?,
        loss_limit_hp: parse_loss_limit("loss_limit_hp", get("loss_limit_hp"))?,
    };
    params.validate()?;

    let slots = match seen.get("slots") {
        Some(v) => parse_u64("slots", v)?,
        None => 1_000_000,
    };
    let warmup_slots = match seen.get("warmup_slots") {
        Some(v) => parse_u64("warmup_slots", v)?,
        None => 10_000,
    };
    if slots == 0 {
        return Err(bad("slots", "must be at least 1"));
    }
    if warmup_slots >= slots {
        return Err(bad(
            "warmup_slots",
            format!("{warmup_slots} leaves no measured slots out of {slots}"),
        ));
    }
    let seed = match seen.get("seed") {
        Some(v) => parse_u64("seed", v)?,
        None => 1,
    };

    let sweep_weights = match seen.get("sweep_weights") {
        Some(v) => parse_f64_list("sweep_weights", v)?,
        None => (0..10).map(|i| 0.50 + 0.05 * i as f64).collect(),
    };
    for &w in &sweep_weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(bad("sweep_weights", format!("weight {w} outside [0, 1]")));
        }
    }
    let sweep_arrivals = match seen.get("sweep_arrivals") {
        Some(v) => parse_f64_list("sweep_arrivals", v)?,
        None => (1..10).map(|i| 0.05 * i as f64).collect(),
    };
    for &r in &sweep_arrivals {
        if !(0.0..=1.0).contains(&r) {
            return Err(bad("sweep_arrivals", format!("rate {r} outside [0, 1]")));
        }
    }
    let out_dir = PathBuf::from(seen.get("out_dir").map(String::as_str).unwrap_or("."));

    Ok(ExperimentConfig {
        params,
        slots,
        warmup_slots,
        seed,
        sweep_weights,
        sweep_arrivals,
        out_dir,
    })
}
