//! Per-command configuration files.
//!
//! Every file is optional and may be partial: its JSON is merged over the
//! defaults, so `{"steps": 2000}` is a valid scenario config.

use std::path::Path;

use delaycast_core::formulation::VariableSchema;
use delaycast_core::tft::TftConfig;
use delaycast_core::training::TrainConfig;
use delaycast_core::wx::CodecConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

/// Settings of `train-wx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WxTrainConfig {
    pub codec: CodecConfig,
    pub train: TrainConfig,
    /// Every `stride`-th grid is used for training.
    pub stride: usize,
}

impl Default for WxTrainConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            train: TrainConfig {
                epochs: 34,
                batch_size: 8,
                lr: 2e-3,
                patience: 34,
                ..TrainConfig::default()
            },
            stride: 12,
        }
    }
}

/// Settings of `train-tft`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TftTrainConfig {
    pub d: usize,
    pub heads: usize,
    pub dropout: f64,
    pub k: usize,
    pub tau: usize,
    pub quantiles: Vec<f64>,
    /// Share of the time axis before the test period.
    pub split_fraction: f64,
    /// Look-back candidates; when non-empty `k` is chosen among them on the
    /// validation windows.
    pub k_grid: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for TftTrainConfig {
    fn default() -> Self {
        let m = TftConfig::new(VariableSchema::delay());
        Self {
            d: m.d,
            heads: m.heads,
            dropout: m.dropout,
            k: m.k,
            tau: m.tau,
            quantiles: m.quantiles,
            split_fraction: 0.8,
            k_grid: Vec::new(),
            train: TrainConfig {
                epochs: 14,
                ema: 0.998,
                ..TrainConfig::default()
            },
        }
    }
}

impl TftTrainConfig {
    pub fn model(&self, schema: VariableSchema) -> TftConfig {
        TftConfig {
            d: self.d,
            heads: self.heads,
            dropout: self.dropout,
            k: self.k,
            tau: self.tau,
            quantiles: self.quantiles.clone(),
            schema,
        }
    }

    /// First test label time for a series of `steps` quarter hours.
    pub fn t_split(&self, steps: usize) -> Result<usize> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CliError::Usage("split_fraction must lie in (0, 1)".into()));
        }
        Ok((steps as f64 * self.split_fraction).floor() as usize)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults overlaid with the JSON in `text`. Unknown keys are rejected.
pub fn parse_over_defaults<T: Default + Serialize + DeserializeOwned>(text: &str) -> Result<T> {
    let over: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let mut base = serde_json::to_value(T::default())?;
    let known = base.clone();
    check_keys(&known, &over, "")?;
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn check_keys(known: &Value, over: &Value, at: &str) -> Result<()> {
    if let (Value::Object(k), Value::Object(o)) = (known, over) {
        for (key, v) in o {
            let path = if at.is_empty() {
                key.clone()
            } else {
                format!("{at}.{key}")
            };
            match k.get(key) {
                Some(inner) => check_keys(inner, v, &path)?,
                None => return Err(CliError::Usage(format!("config: unknown key {path}"))),
            }
        }
    }
    Ok(())
}

/// Reads a config file, or the defaults when `path` is `None`. A missing or
/// malformed file is a usage error.
pub fn load<T: Default + Serialize + DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_over_defaults(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use delaycast_core::scenario::ScenarioConfig;

    #[test]
    fn partial_files_keep_defaults() {
        let c: ScenarioConfig = parse_over_defaults(r#"{"steps": 500, "storms": {"birth_rate": 0.2}}"#).unwrap();
        let d = ScenarioConfig::default();
        assert_eq!(c.steps, 500);
        assert_eq!(c.storms.birth_rate, 0.2);
        assert_eq!(c.storms.radius, d.storms.radius);
        assert_eq!(c.airports, d.airports);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = parse_over_defaults::<ScenarioConfig>(r#"{"stepz": 5}"#).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
    }
}
