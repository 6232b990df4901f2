//! TOML provider configuration and `cfg:` model references.
//!
//! ```toml
//! [providers.gpt]
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! default_model = "gpt-4o"
//! ```
//!
//! API keys are read from the named environment variable only; a literal key
//! in the file is rejected as an unknown field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::{
    http::DEFAULT_TIMEOUT, CachedProvider, ChatProvider, Gateway, HttpProvider, ModelRef,
    ProviderError, RetryPolicy, Retrying,
};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub default_model: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
}

/// Transport settings applied to every HTTP provider.
#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Completion cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            retry: RetryPolicy::default(),
            cache_dir: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ProviderError> {
        toml::from_str(text).map_err(|e| ProviderError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Builds a gateway of HTTP providers: cache over retry over transport.
    ///
    /// Fails if a provider names an API key variable that is unset.
    pub fn build_gateway(&self, opts: &HttpOptions) -> Result<Gateway, ProviderError> {
        let mut gateway = Gateway::new();
        for (id, cfg) in &self.providers {
            let api_key = match &cfg.api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    ProviderError::Config(format!(
                        "provider {id}: environment variable {var} is not set"
                    ))
                })?),
                None => None,
            };
            let http = HttpProvider::new(&cfg.base_url, api_key, opts.timeout)?;
            let mut provider: Arc<dyn ChatProvider> =
                Arc::new(Retrying::new(Arc::new(http), opts.retry));
            if let Some(dir) = &opts.cache_dir {
                provider = Arc::new(CachedProvider::new(provider, dir.clone()));
            }
            gateway.register(id.clone(), provider);
        }
        Ok(gateway)
    }
}

/// A command-line model reference: `cfg:<provider-id>[/<model>]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub provider_id: String,
    pub model: Option<String>,
}

impl FromStr for ModelSpec {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("cfg:").ok_or_else(|| {
            ProviderError::Config(format!("model reference {s:?} must start with \"cfg:\""))
        })?;
        let (id, model) = match rest.split_once('/') {
            Some((id, model)) => (id, Some(model)),
            None => (rest, None),
        };
        if id.is_empty() || model.is_some_and(str::is_empty) {
            return Err(ProviderError::Config(format!(
                "malformed model reference {s:?}"
            )));
        }
        Ok(Self {
            provider_id: id.to_string(),
            model: model.map(str::to_string),
        })
    }
}

impl ModelSpec {
    /// Resolves against the config's `default_model` when no model is given.
    /// Without a config (scripted runs) the provider id doubles as model name.
    pub fn resolve(
        &self,
        gateway: &Gateway,
        config: Option<&GatewayConfig>,
    ) -> Result<ModelRef, ProviderError> {
        let model = match (&self.model, config) {
            (Some(m), _) => m.clone(),
            (None, Some(cfg)) => match cfg.providers.get(&self.provider_id) {
                Some(p) => p.default_model.clone(),
                None if gateway.contains(&self.provider_id) => self.provider_id.clone(),
                None => {
                    return Err(ProviderError::Config(format!(
                        "unknown provider id {:?}",
                        self.provider_id
                    )))
                }
            },
            (None, None) => self.provider_id.clone(),
        };
        gateway.model_ref(&self.provider_id, model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[providers.gpt]
base_url = "http://localhost:1/v1"
default_model = "gpt-4o"

[providers.mistral]
base_url = "http://localhost:2/v1"
api_key_env = "POLPROBE_TEST_UNSET_KEY_VAR"
default_model = "mistral-large"
"#;

    #[test]
    fn parses_provider_tables() {
        let cfg = GatewayConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.providers.len(), 2);
        assert_eq!(cfg.providers["gpt"].default_model, "gpt-4o");
        assert_eq!(
            cfg.providers["mistral"].api_key_env.as_deref(),
            Some("POLPROBE_TEST_UNSET_KEY_VAR")
        );
    }

    #[test]
    fn literal_api_keys_are_rejected() {
        let text = "[providers.x]\nbase_url='u'\ndefault_model='m'\napi_key='sk-123'\n";
        let err = GatewayConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("api_key"), "{err}");
    }

    #[test]
    fn missing_key_variable_fails_gateway_build() {
        let cfg = GatewayConfig::from_toml_str(SAMPLE).unwrap();
        let err = cfg.build_gateway(&HttpOptions::default()).unwrap_err();
        assert!(err.to_string().contains("POLPROBE_TEST_UNSET_KEY_VAR"));
    }

    #[test]
    fn model_spec_parsing() {
        let s: ModelSpec = "cfg:gpt".parse().unwrap();
        assert_eq!(s.provider_id, "gpt");
        assert_eq!(s.model, None);
        let s: ModelSpec = "cfg:gpt/gpt-4-turbo".parse().unwrap();
        assert_eq!(s.model.as_deref(), Some("gpt-4-turbo"));
        assert!("gpt".parse::<ModelSpec>().is_err());
        assert!("cfg:".parse::<ModelSpec>().is_err());
        assert!("cfg:gpt/".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn model_spec_resolution() {
        let mut cfg = GatewayConfig::from_toml_str(SAMPLE).unwrap();
        cfg.providers.remove("mistral");
        let gw = cfg.build_gateway(&HttpOptions::default()).unwrap();
        let spec: ModelSpec = "cfg:gpt".parse().unwrap();
        assert_eq!(
            spec.resolve(&gw, Some(&cfg)).unwrap().model_name(),
            "gpt-4o"
        );
        let spec: ModelSpec = "cfg:gpt/o1".parse().unwrap();
        assert_eq!(spec.resolve(&gw, Some(&cfg)).unwrap().model_name(), "o1");
        let spec: ModelSpec = "cfg:claude".parse().unwrap();
        assert!(spec.resolve(&gw, Some(&cfg)).is_err());
    }
}
