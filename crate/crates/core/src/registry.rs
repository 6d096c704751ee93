//! Registered text-to-image models.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_IMAGES_PER_REQUEST: u32 = 4;

/// Identifier of the provider that serves every model in the default registry.
pub const DEFAULT_PROVIDER: &str = "replicate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    #[serde(default = "default_provider")]
    pub provider: String,
    pub provider_slug: String,
    pub display_name: String,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    #[serde(default = "default_images_per_request")]
    pub images_per_request: u32,
}

fn default_provider() -> String {
    DEFAULT_PROVIDER.to_string()
}

fn default_enabled() -> bool {
    true
}

fn default_images_per_request() -> u32 {
    DEFAULT_IMAGES_PER_REQUEST
}

impl ModelSpec {
    pub fn new(model_id: &str, provider_slug: &str, display_name: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            provider: default_provider(),
            provider_slug: provider_slug.to_string(),
            display_name: display_name.to_string(),
            enabled: true,
            images_per_request: DEFAULT_IMAGES_PER_REQUEST,
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("model `{0}` must request at least one image")]
    ZeroImages(String),
    #[error("registry is empty")]
    Empty,
    #[error("cannot read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed registry file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Ordered set of models. Registration order is the display order used
/// everywhere a per-model listing is produced.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct ModelRegistry {
    models: Vec<ModelSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RegistryFile {
    Wrapped { models: Vec<ModelSpec> },
    Bare(Vec<ModelSpec>),
}

impl ModelRegistry {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self, RegistryError> {
        if models.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut seen = HashSet::new();
        for m in &models {
            if !seen.insert(m.model_id.as_str()) {
                return Err(RegistryError::DuplicateModel(m.model_id.clone()));
            }
            if m.images_per_request == 0 {
                return Err(RegistryError::ZeroImages(m.model_id.clone()));
            }
        }
        Ok(Self { models })
    }

    /// The four open models used for the default deployment. The first one is
    /// the fast model shown on its own before the side-by-side reveal.
    pub fn default_models() -> Self {
        Self::new(vec![
            ModelSpec::new(
                "sdxl-lightning-4step",
                "bytedance/sdxl-lightning-4step",
                "SDXL Lightning (4 step)",
            ),
            ModelSpec::new("kandinsky-2.2", "ai-forever/kandinsky-2.2", "Kandinsky 2.2"),
            ModelSpec::new(
                "stable-diffusion",
                "stability-ai/stable-diffusion",
                "Stable Diffusion",
            ),
            ModelSpec::new(
                "latent-consistency-model",
                "fofr/latent-consistency-model",
                "Latent Consistency Model",
            ),
        ])
        .expect("default registry is valid")
    }

    /// Accepts either a bare JSON array of model specs or `{"models": [...]}`.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let models = match serde_json::from_str::<RegistryFile>(text)? {
            RegistryFile::Wrapped { models } | RegistryFile::Bare(models) => models,
        };
        Self::new(models)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn position(&self, model_id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.model_id == model_id)
    }

    pub fn all(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn enabled(&self) -> impl Iterator<Item = &ModelSpec> {
        self.models.iter().filter(|m| m.enabled)
    }

    pub fn enabled_ids(&self) -> Vec<String> {
        self.enabled().map(|m| m.model_id.clone()).collect()
    }

    pub fn slugs_for(&self, provider: &str) -> Vec<String> {
        self.models
            .iter()
            .filter(|m| m.provider == provider)
            .map(|m| m.provider_slug.clone())
            .collect()
    }

    /// Sort key placing registered models in registry order and anything
    /// unknown after them, alphabetically.
    pub fn order_key<'a>(&self, model_id: &'a str) -> (usize, &'a str) {
        (self.position(model_id).unwrap_or(usize::MAX), model_id)
    }
}
