use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vulnembed::feedback::AdjustmentConfig;
use vulnembed::pipeline::EngineOptions;
use vulnembed::similarity::DEFAULT_THRESHOLD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {value:?}")]
    Env { key: &'static str, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Service settings, read from a TOML file and overridable per key through
/// `VULNEMBED_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub store: PathBuf,
    pub threshold: f64,
    pub alpha: f64,
    pub guard: f64,
    pub k: usize,
    /// Allowed browser origin; `"*"` allows any.
    pub cors_origin: String,
    /// Scan jobs allowed to run at the same time.
    pub scan_workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            store: PathBuf::from("store"),
            threshold: DEFAULT_THRESHOLD,
            alpha: AdjustmentConfig::default().step_scale,
            guard: AdjustmentConfig::default().guard,
            k: 5,
            cors_origin: "*".into(),
            scan_workers: 2,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &'static str, value: String) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Env { key, value })
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (defaults when `None`), then applies overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(env)?;
        Ok(cfg)
    }

    /// Overrides fields from `VULNEMBED_*` variables, then validates.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let cfg = self;
        if let Some(v) = env("VULNEMBED_HOST") {
            cfg.host = v;
        }
        if let Some(v) = env("VULNEMBED_PORT") {
            cfg.port = parse_env("VULNEMBED_PORT", v)?;
        }
        if let Some(v) = env("VULNEMBED_STORE") {
            cfg.store = PathBuf::from(v);
        }
        if let Some(v) = env("VULNEMBED_THRESHOLD") {
            cfg.threshold = parse_env("VULNEMBED_THRESHOLD", v)?;
        }
        if let Some(v) = env("VULNEMBED_ALPHA") {
            cfg.alpha = parse_env("VULNEMBED_ALPHA", v)?;
        }
        if let Some(v) = env("VULNEMBED_GUARD") {
            cfg.guard = parse_env("VULNEMBED_GUARD", v)?;
        }
        if let Some(v) = env("VULNEMBED_K") {
            cfg.k = parse_env("VULNEMBED_K", v)?;
        }
        if let Some(v) = env("VULNEMBED_CORS_ORIGIN") {
            cfg.cors_origin = v;
        }
        cfg.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine_options()
            .adjustment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 2.0) {
            return Err(ConfigError::Invalid("threshold must be in (0, 2]".into()));
        }
        if self.scan_workers == 0 {
            return Err(ConfigError::Invalid("scan_workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            threshold: self.threshold,
            k: self.k,
            adjustment: AdjustmentConfig { step_scale: self.alpha, guard: self.guard },
        }
    }
}
