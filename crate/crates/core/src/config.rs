//! Experiment configuration: a flat TOML table of typed keys.
//!
//! ```toml
//! model = "slowed:w0=[0.5,0.3,0.2]"
//! seed = 42
//! dt = 1e-4
//! n_paths = 1000
//! strategy = "additive"
//! genfn = "quadratic|normalize"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genfn::{GenFn, GenFnError};
use crate::models::{ModelError, ModelSpec, Scheme, SimConfig};

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_N_PATHS: usize = 1000;
pub const DEFAULT_EXPORT_PATHS: usize = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config key `{0}` is required")]
    Missing(&'static str),
    #[error("config key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Syntax(String),
}

impl ConfigError {
    /// The offending key, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Missing(k) => Some(k),
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }

    fn invalid(key: &str, msg: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            msg: msg.to_string(),
        }
    }
}

/// The file as written, before defaults and validation.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub n_paths: Option<usize>,
    pub scheme: Option<String>,
    pub boundary_epsilon: Option<f64>,
    pub refine: Option<bool>,
    pub strategy: Option<String>,
    pub genfn: Option<String>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub export_paths: Option<usize>,
}

/// Strategy selector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Market,
    Additive,
    Multiplicative,
    /// Power-of-first-weight strategy `ν₁^q`.
    Power { q: f64 },
    OneAsset { eta: f64 },
    Switching { h: f64, eta: f64 },
}

impl StrategySpec {
    pub fn parse(s: &str) -> Result<StrategySpec, String> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let params: Vec<(&str, &str)> = rest
            .split(',')
            .filter(|kv| !kv.trim().is_empty())
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| format!("expected key=value, got '{kv}'"))
            })
            .collect::<Result<_, _>>()?;
        let get = |key: &str| -> Result<f64, String> {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| format!("'{name}' needs parameter '{key}'"))?
                .1
                .parse::<f64>()
                .map_err(|e| format!("parameter '{key}': {e}"))
        };
        match name.trim() {
            "market" => Ok(StrategySpec::Market),
            "additive" => Ok(StrategySpec::Additive),
            "multiplicative" => Ok(StrategySpec::Multiplicative),
            "power" => Ok(StrategySpec::Power { q: get("q")? }),
            "one_asset" => Ok(StrategySpec::OneAsset { eta: get("eta")? }),
            "switching" => Ok(StrategySpec::Switching {
                h: get("h")?,
                eta: get("eta")?,
            }),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }

    pub fn label(&self) -> String {
        match self {
            StrategySpec::Market => "market".into(),
            StrategySpec::Additive => "additive".into(),
            StrategySpec::Multiplicative => "multiplicative".into(),
            StrategySpec::Power { q } => format!("power:q={q}"),
            StrategySpec::OneAsset { eta } => format!("one_asset:eta={eta}"),
            StrategySpec::Switching { h, eta } => format!("switching:h={h},eta={eta}"),
        }
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub sim: SimConfig,
    pub strategy: StrategySpec,
    pub genfn: GenFn,
    pub genfn_id: String,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub export_paths: usize,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<RawConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RawConfig, ConfigError> {
        RawConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let model_id = self.model.as_deref().ok_or(ConfigError::Missing("model"))?;
        let seed = self.seed.ok_or(ConfigError::Missing("seed"))?;
        let model = ModelSpec::parse(model_id).map_err(|e| ConfigError::invalid("model", e))?;
        let mut sim = SimConfig::new(
            self.dt.unwrap_or(DEFAULT_DT),
            self.horizon.unwrap_or_else(|| model.default_horizon()),
            self.n_paths.unwrap_or(DEFAULT_N_PATHS),
            seed,
        );
        if let Some(s) = &self.scheme {
            sim.scheme = s.parse::<Scheme>().map_err(|e| ConfigError::invalid("scheme", e))?;
        }
        if sim.scheme == Scheme::Exact && !model.has_exact() {
            return Err(ConfigError::invalid("scheme", ModelError::NoExactSolution));
        }
        if let Some(e) = self.boundary_epsilon {
            sim.boundary_epsilon = e;
        }
        if let Some(r) = self.refine {
            sim.refine = r;
        }
        if let Err(e) = sim.validate() {
            let key = if !(sim.dt > 0.0) || !sim.dt.is_finite() {
                "dt"
            } else if sim.n_paths == 0 {
                "n_paths"
            } else if !(sim.horizon >= sim.dt) {
                "horizon"
            } else {
                "boundary_epsilon"
            };
            return Err(ConfigError::invalid(key, e));
        }
        let strategy = StrategySpec::parse(self.strategy.as_deref().unwrap_or("market"))
            .map_err(|e| ConfigError::invalid("strategy", e))?;
        let genfn_id = self.genfn.clone().unwrap_or_else(|| "quadratic".into());
        let mu0 = model.initial();
        let genfn = GenFn::parse(&genfn_id, Some(&mu0))
            .map_err(|e: GenFnError| ConfigError::invalid("genfn", e))?;
        if let Some(0) = self.threads {
            return Err(ConfigError::invalid("threads", "must be >= 1"));
        }
        Ok(ExperimentConfig {
            model,
            sim,
            strategy,
            genfn,
            genfn_id,
            threads: self.threads,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            export_paths: self.export_paths.unwrap_or(DEFAULT_EXPORT_PATHS),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RawConfig::from_toml("model = \"slowed\"\nseed = 3\n").unwrap().resolve().unwrap();
        assert_eq!(c.sim.dt, DEFAULT_DT);
        assert_eq!(c.sim.n_paths, DEFAULT_N_PATHS);
        assert_eq!(c.sim.horizon, c.model.default_horizon());
        assert_eq!(c.strategy, StrategySpec::Market);
    }

    #[test]
    fn missing_keys_are_named() {
        let e = RawConfig::from_toml("model = \"slowed\"\n").unwrap().resolve().unwrap_err();
        assert_eq!(e.key(), Some("seed"));
        let e = RawConfig::from_toml("seed = 1\n").unwrap().resolve().unwrap_err();
        assert_eq!(e.key(), Some("model"));
        let e = RawConfig::from_toml("model = \"slowed\"\nseed = 1\ndt = -1.0\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert_eq!(e.key(), Some("dt"));
        assert!(RawConfig::from_toml("modle = \"slowed\"\n").is_err());
    }

    #[test]
    fn strategy_ids() {
        assert_eq!(
            StrategySpec::parse("switching:h=0,eta=1").unwrap(),
            StrategySpec::Switching { h: 0.0, eta: 1.0 }
        );
        assert_eq!(
            StrategySpec::parse("one_asset:eta=0.09").unwrap(),
            StrategySpec::OneAsset { eta: 0.09 }
        );
        assert!(StrategySpec::parse("switching:h=0").is_err());
        assert!(StrategySpec::parse("bogus").is_err());
    }
}
