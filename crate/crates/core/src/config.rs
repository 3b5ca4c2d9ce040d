//! Retrieval and service configuration.
//!
//! Values come from a TOML file, then `CLINRAG_*` environment variables, then
//! command-line flags, each layer overriding the previous one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::Category;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
}

/// Per-category keyword weights. Every category has a positive weight;
/// categories missing from a config file keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CategoryWeights(BTreeMap<Category, f64>);

impl<'de> Deserialize<'de> for CategoryWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::with(BTreeMap::<Category, f64>::deserialize(d)?))
    }
}

impl Default for CategoryWeights {
    fn default() -> Self {
        Self(BTreeMap::from([
            (Category::Diagnosis, 3.0),
            (Category::Medication, 2.0),
            (Category::Procedure, 2.0),
            (Category::Symptom, 1.5),
            (Category::Other, 1.0),
        ]))
    }
}

impl CategoryWeights {
    /// Override the defaults with the given entries.
    pub fn with(entries: impl IntoIterator<Item = (Category, f64)>) -> Self {
        let mut w = Self::default();
        w.0.extend(entries);
        w
    }

    pub fn get(&self, category: Category) -> f64 {
        self.0.get(&category).copied().unwrap_or(1.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|(c, w)| (*c, w * factor)).collect())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (c, w) in &self.0 {
            if !(w.is_finite() && *w > 0.0) {
                return Err(ConfigError::Invalid {
                    key: format!("category_weights.{c}"),
                    reason: format!("{w} is not a positive weight"),
                });
            }
        }
        Ok(())
    }
}

/// Semantic mixing weight plus keyword category weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridWeights {
    pub lambda: f64,
    pub category_weights: CategoryWeights,
}

impl Default for HybridWeights {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            category_weights: CategoryWeights::default(),
        }
    }
}

impl HybridWeights {
    pub fn new(lambda: f64, category_weights: CategoryWeights) -> Result<Self, ConfigError> {
        let w = Self {
            lambda,
            category_weights,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("lambda", self.lambda)?;
        self.category_weights.validate()
    }
}

fn unit_interval(key: &str, v: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(ConfigError::Invalid {
            key: key.into(),
            reason: format!("{v} outside [0, 1]"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub category_weights: CategoryWeights,
    pub theta_low: f64,
    pub theta_high: f64,
    pub k_patients: usize,
    pub k_communities: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            alpha: 0.7,
            category_weights: CategoryWeights::default(),
            theta_low: 0.5,
            theta_high: 0.75,
            k_patients: 5,
            k_communities: 3,
        }
    }
}

impl RetrievalConfig {
    pub fn hybrid_weights(&self) -> HybridWeights {
        HybridWeights {
            lambda: self.lambda,
            category_weights: self.category_weights.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("lambda", self.lambda)?;
        unit_interval("alpha", self.alpha)?;
        unit_interval("theta_low", self.theta_low)?;
        unit_interval("theta_high", self.theta_high)?;
        if self.theta_low >= self.theta_high {
            return Err(ConfigError::Invalid {
                key: "theta_low".into(),
                reason: "must be below theta_high".into(),
            });
        }
        if self.k_patients == 0 || self.k_communities == 0 {
            return Err(ConfigError::Invalid {
                key: "k_patients/k_communities".into(),
                reason: "must be at least 1".into(),
            });
        }
        self.category_weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub cors_origin: String,
    pub session_ttl_secs: u64,
    pub max_outstanding_calls: usize,
    pub port: u16,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            cors_origin: "http://localhost:5173".into(),
            session_ttl_secs: 3600,
            max_outstanding_calls: 8,
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub index_dir: Option<PathBuf>,
    pub embedding_endpoint: Option<String>,
    pub llm_endpoint: Option<String>,
    pub llm_model: String,
    /// Name of the environment variable holding the LLM API key.
    pub api_key_env: String,
    pub summary_chars: usize,
    pub retrieval: RetrievalConfig,
    pub service: ServiceSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            index_dir: None,
            embedding_endpoint: None,
            llm_endpoint: None,
            llm_model: "default".into(),
            api_key_env: "CLINRAG_API_KEY".into(),
            summary_chars: crate::community::DEFAULT_SUMMARY_CHARS,
            retrieval: RetrievalConfig::default(),
            service: ServiceSettings::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.trim().parse().map_err(|_| ConfigError::Invalid {
        key: key.into(),
        reason: format!("cannot parse {raw:?}"),
    })
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Apply `CLINRAG_*` overrides read through `lookup`.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        if let Some(v) = lookup("CLINRAG_INDEX_DIR") {
            self.index_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("CLINRAG_EMBEDDING_ENDPOINT") {
            self.embedding_endpoint = Some(v);
        }
        if let Some(v) = lookup("CLINRAG_LLM_ENDPOINT") {
            self.llm_endpoint = Some(v);
        }
        if let Some(v) = lookup("CLINRAG_LLM_MODEL") {
            self.llm_model = v;
        }
        if let Some(v) = lookup("CLINRAG_API_KEY_ENV") {
            self.api_key_env = v;
        }
        if let Some(v) = lookup("CLINRAG_CORS_ORIGIN") {
            self.service.cors_origin = v;
        }
        if let Some(v) = lookup("CLINRAG_LAMBDA") {
            self.retrieval.lambda = parse_env("CLINRAG_LAMBDA", &v)?;
        }
        if let Some(v) = lookup("CLINRAG_ALPHA") {
            self.retrieval.alpha = parse_env("CLINRAG_ALPHA", &v)?;
        }
        if let Some(v) = lookup("CLINRAG_K_PATIENTS") {
            self.retrieval.k_patients = parse_env("CLINRAG_K_PATIENTS", &v)?;
        }
        if let Some(v) = lookup("CLINRAG_K_COMMUNITIES") {
            self.retrieval.k_communities = parse_env("CLINRAG_K_COMMUNITIES", &v)?;
        }
        if let Some(v) = lookup("CLINRAG_SESSION_TTL_SECS") {
            self.service.session_ttl_secs = parse_env("CLINRAG_SESSION_TTL_SECS", &v)?;
        }
        Ok(())
    }

    /// File (when given) then process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.retrieval.validate()?;
        Ok(cfg)
    }
}
