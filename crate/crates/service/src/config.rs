//! Service configuration: defaults, an optional TOML file and `GEOWINE_*`
//! environment overrides, applied in that order.

use std::path::{Path, PathBuf};
use std::time::Duration;

use geowine_kg::{
    LiveSettings, NetworkMode, EVENT_REGISTRY_ARTICLES_URL, OEKG_SPARQL_URL,
};
use geowine_kg::wikidata::{WIKIDATA_ENTITY_DATA_URL, WIKIDATA_SPARQL_URL};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderMode {
    #[default]
    Fixture,
    #[serde(alias = "external")]
    ExternalInference,
}

impl ProviderMode {
    pub fn name(self) -> &'static str {
        match self {
            ProviderMode::Fixture => "fixture",
            ProviderMode::ExternalInference => "external-inference",
        }
    }
}

impl std::str::FromStr for ProviderMode {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixture" => Ok(Self::Fixture),
            "external" | "external-inference" | "external_inference" => Ok(Self::ExternalInference),
            other => Err(ServiceError::config(format!("unknown provider mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub network_mode: NetworkMode,
    pub recorded_dir: PathBuf,
    pub provider: ProviderMode,
    pub fixture_dir: PathBuf,
    pub inference_url: Option<String>,
    pub partitioning: PathBuf,
    /// Registry file; the built-in registry when absent.
    pub registry: Option<PathBuf>,
    pub presets: PathBuf,
    /// Persistent embedding cache; in-memory only when absent.
    pub embedding_cache: Option<PathBuf>,
    pub wikidata_sparql_url: String,
    pub wikidata_entity_data_url: String,
    pub news_url: String,
    pub oekg_url: String,
    pub news_api_key: Option<String>,
    pub news_limit: usize,
    pub candidate_cap: usize,
    pub rate_per_host: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            network_mode: NetworkMode::Offline,
            recorded_dir: "fixtures/demo/recorded".into(),
            provider: ProviderMode::Fixture,
            fixture_dir: "fixtures/demo/provider".into(),
            inference_url: None,
            partitioning: "fixtures/demo/partitioning.csv".into(),
            registry: None,
            presets: "fixtures/demo/presets.json".into(),
            embedding_cache: None,
            wikidata_sparql_url: WIKIDATA_SPARQL_URL.into(),
            wikidata_entity_data_url: WIKIDATA_ENTITY_DATA_URL.into(),
            news_url: EVENT_REGISTRY_ARTICLES_URL.into(),
            oekg_url: OEKG_SPARQL_URL.into(),
            news_api_key: None,
            news_limit: geowine_kg::DEFAULT_NEWS_LIMIT,
            candidate_cap: 50,
            rate_per_host: 2.0,
            timeout_secs: 10.0,
            max_retries: 2,
        }
    }
}

impl Config {
    /// Reads a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| ServiceError::config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.recorded_dir);
        fix(&mut self.fixture_dir);
        fix(&mut self.partitioning);
        fix(&mut self.presets);
        if let Some(p) = self.registry.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embedding_cache.as_mut() {
            fix(p);
        }
    }

    /// Defaults, then the file named by `GEOWINE_CONFIG` (if set), then
    /// individual environment overrides.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn from_vars(var: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let mut cfg = match var("GEOWINE_CONFIG") {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_vars(var)?;
        Ok(cfg)
    }

    pub fn apply_vars(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ServiceError> {
            v.trim()
                .parse()
                .map_err(|_| ServiceError::config(format!("{key}: cannot parse `{v}`")))
        }
        if let Some(v) = var("GEOWINE_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("GEOWINE_NETWORK_MODE") {
            self.network_mode = v.parse().map_err(ServiceError::config)?;
        }
        if let Some(v) = var("GEOWINE_RECORDED_DIR") {
            self.recorded_dir = v.into();
        }
        if let Some(v) = var("GEOWINE_PROVIDER") {
            self.provider = v.parse()?;
        }
        if let Some(v) = var("GEOWINE_FIXTURE_DIR") {
            self.fixture_dir = v.into();
        }
        if let Some(v) = var("GEOWINE_INFERENCE_URL") {
            self.inference_url = Some(v);
        }
        if let Some(v) = var("GEOWINE_PARTITIONING") {
            self.partitioning = v.into();
        }
        if let Some(v) = var("GEOWINE_REGISTRY") {
            self.registry = Some(v.into());
        }
        if let Some(v) = var("GEOWINE_PRESETS") {
            self.presets = v.into();
        }
        if let Some(v) = var("GEOWINE_EMBEDDING_CACHE") {
            self.embedding_cache = Some(v.into());
        }
        if let Some(v) = var("GEOWINE_WIKIDATA_SPARQL_URL") {
            self.wikidata_sparql_url = v;
        }
        if let Some(v) = var("GEOWINE_WIKIDATA_ENTITY_DATA_URL") {
            self.wikidata_entity_data_url = v;
        }
        if let Some(v) = var("GEOWINE_NEWS_URL") {
            self.news_url = v;
        }
        if let Some(v) = var("GEOWINE_OEKG_URL") {
            self.oekg_url = v;
        }
        if let Some(v) = var("GEOWINE_NEWS_API_KEY") {
            self.news_api_key = Some(v);
        }
        if let Some(v) = var("GEOWINE_NEWS_LIMIT") {
            self.news_limit = num("GEOWINE_NEWS_LIMIT", &v)?;
        }
        if let Some(v) = var("GEOWINE_CANDIDATE_CAP") {
            self.candidate_cap = num("GEOWINE_CANDIDATE_CAP", &v)?;
        }
        if let Some(v) = var("GEOWINE_RATE_PER_HOST") {
            self.rate_per_host = num("GEOWINE_RATE_PER_HOST", &v)?;
        }
        if let Some(v) = var("GEOWINE_TIMEOUT_SECS") {
            self.timeout_secs = num("GEOWINE_TIMEOUT_SECS", &v)?;
        }
        if let Some(v) = var("GEOWINE_MAX_RETRIES") {
            self.max_retries = num("GEOWINE_MAX_RETRIES", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.rate_per_host.is_nan() || self.rate_per_host < 0.0 {
            return Err(ServiceError::config("rate_per_host must be non-negative"));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(ServiceError::config("timeout_secs must be positive"));
        }
        if self.candidate_cap == 0 {
            return Err(ServiceError::config("candidate_cap must be at least 1"));
        }
        if self.news_limit == 0 || self.news_limit > geowine_kg::MAX_NEWS_LIMIT {
            return Err(ServiceError::config(format!(
                "news_limit must be within 1..={}",
                geowine_kg::MAX_NEWS_LIMIT
            )));
        }
        if self.provider == ProviderMode::ExternalInference && self.inference_url.is_none() {
            return Err(ServiceError::config(
                "the external-inference provider needs inference_url",
            ));
        }
        Ok(())
    }

    pub fn live_settings(&self) -> LiveSettings {
        LiveSettings {
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_retries: self.max_retries,
            rate_per_host: self.rate_per_host,
            ..LiveSettings::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides_defaults() {
        let vars: HashMap<&str, &str> = [
            ("GEOWINE_PROVIDER", "external"),
            ("GEOWINE_INFERENCE_URL", "http://127.0.0.1:9000/infer"),
            ("GEOWINE_NETWORK_MODE", "live"),
            ("GEOWINE_CANDIDATE_CAP", "7"),
        ]
        .into_iter()
        .collect();
        let cfg = Config::from_vars(|k| vars.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.provider, ProviderMode::ExternalInference);
        assert_eq!(cfg.network_mode, NetworkMode::Live);
        assert_eq!(cfg.candidate_cap, 7);
        cfg.validate().unwrap();

        let bad = Config::from_vars(|k| (k == "GEOWINE_RATE_PER_HOST").then(|| "fast".into()));
        assert!(bad.is_err());
    }

    #[test]
    fn file_paths_are_rebased() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geowine.toml");
        std::fs::write(&path, "presets = \"p.json\"\nnetwork_mode = \"offline\"\n").unwrap();
        let cfg = Config::from_file(&path).unwrap();
        assert_eq!(cfg.presets, dir.path().join("p.json"));
        std::fs::write(&path, "colour = \"blue\"\n").unwrap();
        assert!(Config::from_file(&path).is_err());
    }
}
