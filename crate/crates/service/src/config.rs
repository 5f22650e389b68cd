//! Service configuration files.
//!
//! ```toml
//! bind = "127.0.0.1:7878"
//! persistence = "sandi.log"   # optional append-only log
//! clock = "system"            # or "manual", set through /v1/admin/clock
//! epoch_dur = 3600
//! E = 2
//! val_period = 3600
//! report_lock = 7200
//! B_vk = 1
//! k = 2
//! M = 100
//! b = 0.5
//! mu = -8                     # sensitivity-1 values, scaled by B_vk
//! sigma = 1.1
//! sc_init = 100
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sandi_core::dummy::batch_size_for_sigma;
use sandi_core::error::ParamError;
use sandi_core::group::GroupParams;
use sandi_core::noise::NoiseParams;
use sandi_core::score::{ScoreParams, Thresholds};
use sandi_core::server::{AsConfig, NoiseBackend};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{field}: {value:?} is not a decimal number")]
    Decimal { field: &'static str, value: String },
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// A number written either bare or quoted; quoted values keep every digit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecimalValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl DecimalValue {
    fn to_decimal(&self, field: &'static str) -> Result<Decimal, ConfigError> {
        let text = match self {
            DecimalValue::Int(v) => v.to_string(),
            DecimalValue::Float(v) => v.to_string(),
            DecimalValue::Text(s) => s.clone(),
        };
        Decimal::from_str(&text).map_err(|_| ConfigError::Decimal { field, value: text })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    System,
    Manual,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Gaussian,
    Dummy,
}

/// The AS parameters as written in a config file. Missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsSettings {
    pub epoch_dur: u64,
    #[serde(rename = "E")]
    pub expiry: u64,
    pub val_period: u64,
    pub report_lock: u64,
    #[serde(rename = "B_vk")]
    pub b_vk: i64,
    pub k: i64,
    #[serde(rename = "M")]
    pub cap: i64,
    pub b: f64,
    pub mu: DecimalValue,
    pub sigma: DecimalValue,
    pub sc_init: Option<f64>,
    pub thresholds: Option<[f64; 3]>,
    pub noise_backend: BackendChoice,
    pub dummy_batch: Option<u32>,
}

impl Default for AsSettings {
    fn default() -> Self {
        AsSettings {
            epoch_dur: 3600,
            expiry: 2,
            val_period: 3600,
            report_lock: 7200,
            b_vk: 1,
            k: 2,
            cap: 100,
            b: 0.5,
            mu: DecimalValue::Int(-8),
            sigma: DecimalValue::Text("1.1".into()),
            sc_init: None,
            thresholds: None,
            noise_backend: BackendChoice::Gaussian,
            dummy_batch: None,
        }
    }
}

impl AsSettings {
    pub fn to_as_config(&self) -> Result<AsConfig, ConfigError> {
        let noise = NoiseParams::from_base(
            self.mu.to_decimal("mu")?,
            self.sigma.to_decimal("sigma")?,
            self.b_vk,
        )?;
        let thresholds = match self.thresholds {
            Some(cuts) => Thresholds::new(cuts)?,
            None => Thresholds::for_cap(self.cap),
        };
        let config = AsConfig {
            epoch_dur: self.epoch_dur,
            expiry: self.expiry,
            val_period: self.val_period,
            report_lock: self.report_lock,
            b_vk: self.b_vk,
            score: ScoreParams::new(self.k, self.cap, self.b)?,
            thresholds,
            noise,
            sc_init: self.sc_init.unwrap_or(self.cap as f64),
            group: GroupParams::default(),
            noise_backend: match self.noise_backend {
                BackendChoice::Gaussian => NoiseBackend::Gaussian,
                BackendChoice::Dummy => NoiseBackend::Dummy,
            },
            dummy_batch: self
                .dummy_batch
                .unwrap_or_else(|| batch_size_for_sigma(noise.std_f64())),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub persistence: Option<PathBuf>,
    #[serde(default)]
    pub clock: ClockMode,
    /// Seeds the AS randomness; fresh entropy when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub settings: AsSettings,
}

const SERVICE_KEYS: [&str; 4] = ["bind", "persistence", "clock", "seed"];

#[derive(Deserialize)]
struct ServiceKeys {
    #[serde(default = "default_bind")]
    bind: String,
    #[serde(default)]
    persistence: Option<PathBuf>,
    #[serde(default)]
    clock: ClockMode,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_bind() -> String {
    "127.0.0.1:7878".into()
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        // Split the service keys from the AS keys so that typos in either are rejected;
        // `flatten` would swallow them.
        let mut settings: toml::Table = text.parse()?;
        let mut service = toml::Table::new();
        for key in SERVICE_KEYS {
            if let Some(v) = settings.remove(key) {
                service.insert(key.into(), v);
            }
        }
        let service: ServiceKeys = toml::Value::Table(service).try_into()?;
        let settings: AsSettings = toml::Value::Table(settings).try_into()?;
        settings.to_as_config()?;
        Ok(ServiceConfig {
            bind: service.bind,
            persistence: service.persistence,
            clock: service.clock,
            seed: service.seed,
            settings,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_core_defaults() {
        let config = AsSettings::default().to_as_config().unwrap();
        assert_eq!(config, AsConfig::default());
    }

    #[test]
    fn parses_the_documented_example() {
        let text = r#"
bind = "0.0.0.0:9000"
persistence = "as.log"
clock = "manual"
epoch_dur = 600
E = 3
val_period = 1200
report_lock = 1800
B_vk = 3
k = 1
M = 50
b = 0.25
mu = -8
sigma = 1.1
sc_init = 40
"#;
        let parsed = ServiceConfig::from_toml(text).unwrap();
        assert_eq!(parsed.clock, ClockMode::Manual);
        assert_eq!(parsed.persistence, Some(PathBuf::from("as.log")));
        let config = parsed.settings.to_as_config().unwrap();
        assert_eq!(config.noise.mu, Decimal::from(-23));
        assert_eq!(config.noise.noise_std, Decimal::from_str("3.3").unwrap());
        assert_eq!(config.sc_init, 40.0);
        assert_eq!(config.expiry, 3);
    }

    #[test]
    fn quoted_decimals_are_exact() {
        let text = "mu = \"-8\"\nsigma = \"1.1\"\nB_vk = 5\nreport_lock = 7200\n";
        let config = ServiceConfig::from_toml(text)
            .unwrap()
            .settings
            .to_as_config()
            .unwrap();
        assert_eq!(config.noise.mu, Decimal::from(-38));
        assert_eq!(config.noise.noise_std, Decimal::from_str("5.5").unwrap());
    }

    #[test]
    fn rejects_invalid_settings() {
        assert!(ServiceConfig::from_toml("mu = -0.5").is_err());
        assert!(ServiceConfig::from_toml("sigma = \"wide\"").is_err());
        assert!(ServiceConfig::from_toml("report_lock = 10").is_err());
        assert!(ServiceConfig::from_toml("unknown = 1").is_err());
        assert!(ServiceConfig::from_toml("sc_init = 101").is_err());
    }
}
