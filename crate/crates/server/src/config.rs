//! JSON service configuration and the platform it describes.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use t2i_audit_core::arena::ArenaConfig;
use t2i_audit_core::clock;
use t2i_audit_core::orchestrator::OrchestratorConfig;
use t2i_audit_core::provider::{
    HttpProvider, HttpProviderConfig, MockProvider, ProviderSet, TOKEN_ENV_VAR,
};
use t2i_audit_core::registry::{ModelRegistry, DEFAULT_PROVIDER};
use t2i_audit_core::report::{ForumClient, ForumConfig};
use t2i_audit_core::session::QuestionCatalog;
use t2i_audit_core::{Platform, PlatformBuilder};

use crate::StartupError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen_address: String,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub forum: Option<ForumConfig>,
    /// Replaces the built-in question catalog.
    #[serde(default)]
    pub questions_path: Option<PathBuf>,
    /// Defaults to zero-delay polling in mock mode.
    #[serde(default)]
    pub orchestrator: Option<OrchestratorConfig>,
    #[serde(default)]
    pub arena: ArenaSettings,
    #[serde(default)]
    pub mock_mode: bool,
    #[serde(default)]
    pub mock_seed: u64,
    /// Allowed browser origin; `*` allows any.
    #[serde(default)]
    pub cors_origin: Option<String>,
    #[serde(default = "default_housekeeping")]
    pub housekeeping_interval_s: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    /// Everything stays in memory when absent.
    #[serde(default)]
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    /// Model registry JSON; the built-in registry when absent.
    #[serde(default)]
    pub registry_path: Option<PathBuf>,
    #[serde(default = "default_base_url")]
    pub base_url: String,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            registry_path: None,
            base_url: default_base_url(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaSettings {
    pub k_factor: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub battle_ttl_s: i64,
}

impl Default for ArenaSettings {
    fn default() -> Self {
        let d = ArenaConfig::default();
        Self {
            k_factor: d.k_factor,
            bootstrap_resamples: d.bootstrap_resamples,
            bootstrap_seed: d.bootstrap_seed,
            battle_ttl_s: d.battle_ttl.num_seconds(),
        }
    }
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

fn default_base_url() -> String {
    "https://api.replicate.com/v1".to_string()
}

fn default_housekeeping() -> u64 {
    60
}

impl Default for ServiceConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

fn invalid(reason: impl Into<String>) -> StartupError {
    StartupError::Config(reason.into())
}

impl ServiceConfig {
    pub fn from_json(text: &str) -> Result<Self, StartupError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn set_port(&mut self, port: u16) {
        let host = match self.listen_address.rsplit_once(':') {
            Some((host, _)) => host.to_string(),
            None => self.listen_address.clone(),
        };
        self.listen_address = format!("{host}:{port}");
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, StartupError> {
        self.listen_address
            .parse()
            .map_err(|e| invalid(format!("listen_address `{}`: {e}", self.listen_address)))
    }

    fn orchestrator_config(&self) -> OrchestratorConfig {
        self.orchestrator.clone().unwrap_or_else(|| {
            if self.mock_mode {
                OrchestratorConfig::mock()
            } else {
                OrchestratorConfig::default()
            }
        })
    }

    fn arena_config(&self) -> ArenaConfig {
        ArenaConfig {
            k_factor: self.arena.k_factor,
            bootstrap_resamples: self.arena.bootstrap_resamples,
            bootstrap_seed: self.arena.bootstrap_seed,
            battle_ttl: chrono::Duration::seconds(self.arena.battle_ttl_s),
            ..ArenaConfig::default()
        }
    }

    /// Checks everything that can be checked without side effects beyond
    /// creating the storage root.
    pub fn validate(&self) -> Result<(), StartupError> {
        self.socket_addr()?;
        let k = self.arena.k_factor;
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("arena.k_factor must be positive, got {k}")));
        }
        if self.arena.battle_ttl_s <= 0 {
            return Err(invalid("arena.battle_ttl_s must be positive"));
        }
        let orch = self.orchestrator_config();
        if orch.workers == 0 {
            return Err(invalid("orchestrator.workers must be at least 1"));
        }
        if orch.queue_depth == 0 {
            return Err(invalid("orchestrator.queue_depth must be at least 1"));
        }
        if self.housekeeping_interval_s == 0 {
            return Err(invalid("housekeeping_interval_s must be at least 1"));
        }
        if let Some(root) = &self.storage.root {
            check_storage_root(root)?;
        }
        Ok(())
    }

    fn registry(&self) -> Result<ModelRegistry, StartupError> {
        match &self.providers.registry_path {
            Some(path) => ModelRegistry::load(path)
                .map_err(|e| invalid(format!("registry {}: {e}", path.display()))),
            None => Ok(ModelRegistry::default_models()),
        }
    }

    fn provider_set(&self, registry: &ModelRegistry) -> Result<ProviderSet, StartupError> {
        if self.mock_mode {
            let mock = MockProvider::new(self.mock_seed)
                .with_slugs(registry.all().iter().map(|m| m.provider_slug.clone()));
            return Ok(ProviderSet::single(Arc::new(mock)));
        }
        if let Some(m) = registry.enabled().find(|m| m.provider != DEFAULT_PROVIDER) {
            return Err(invalid(format!(
                "model `{}` uses unsupported provider `{}`",
                m.model_id, m.provider
            )));
        }
        let http = HttpProviderConfig::from_env(self.providers.base_url.clone())
            .map_err(|_| invalid(format!("{TOKEN_ENV_VAR} is not set")))?;
        Ok(ProviderSet::new().with(DEFAULT_PROVIDER, Arc::new(HttpProvider::new(http))))
    }

    /// Validates the configuration and assembles the platform. Workers are
    /// not started.
    pub fn build_platform(&self) -> Result<Platform, StartupError> {
        self.validate()?;
        let registry = self.registry()?;
        let providers = self.provider_set(&registry)?;
        let mut builder = PlatformBuilder::new(registry, providers, clock::system())
            .orchestrator(self.orchestrator_config())
            .arena(self.arena_config())
            .forum(self.forum.clone().map(ForumClient::new));
        if let Some(path) = &self.questions_path {
            let catalog = QuestionCatalog::load(path)
                .map_err(|e| invalid(format!("questions {}: {e}", path.display())))?;
            builder = builder.catalog(catalog);
        }
        if let Some(root) = &self.storage.root {
            builder = builder.storage_root(root);
        }
        builder
            .build()
            .map_err(|e| StartupError::Runtime(format!("opening storage: {e}")))
    }
}

fn check_storage_root(root: &Path) -> Result<(), StartupError> {
    let fail = |why: String| invalid(format!("storage.root {}: {why}", root.display()));
    std::fs::create_dir_all(root).map_err(|e| fail(e.to_string()))?;
    if !root.is_dir() {
        return Err(fail("not a directory".into()));
    }
    tempfile::tempfile_in(root).map_err(|e| fail(format!("not writable: {e}")))?;
    Ok(())
}
