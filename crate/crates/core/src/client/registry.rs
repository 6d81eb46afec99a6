use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ModelConfig;
use crate::schema;

const DEFAULT_MODELS: &str = include_str!("../../assets/models.toml");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("duplicate model id `{0}`")]
    Duplicate(String),
    #[error("unsupported registry schema `{0}`")]
    Schema(String),
    #[error("invalid model registry: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    schema: String,
    #[serde(default)]
    model: Vec<ModelConfig>,
}

/// `model_id` → endpoint and defaults.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, ModelConfig>,
}

impl ModelRegistry {
    /// The shipped list of evaluated models.
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_MODELS).expect("builtin model registry parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        if file.schema != schema::MODEL_REGISTRY {
            return Err(RegistryError::Schema(file.schema));
        }
        let mut r = Self::default();
        for m in file.model {
            m.validate()
                .map_err(|e| RegistryError::Parse(e.to_string()))?;
            r.insert(m)?;
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut r = Self::from_toml_str(&text)?;
        // Script paths in a registry file are relative to that file.
        let base = path.parent().unwrap_or(Path::new(""));
        for m in r.models.values_mut() {
            if m.backend == "scripted" && Path::new(&m.endpoint).is_relative() {
                m.endpoint = base.join(&m.endpoint).display().to_string();
            }
        }
        Ok(r)
    }

    pub fn insert(&mut self, m: ModelConfig) -> Result<(), RegistryError> {
        if self.models.contains_key(&m.model_id) {
            return Err(RegistryError::Duplicate(m.model_id));
        }
        self.models.insert(m.model_id.clone(), m);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ModelConfig, RegistryError> {
        self.models
            .get(id)
            .ok_or_else(|| RegistryError::UnknownModel(id.to_string()))
    }

    /// Adds every entry of `other`, replacing entries with the same id.
    pub fn overlay(&mut self, other: ModelRegistry) {
        self.models.extend(other.models);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn to_toml_string(&self) -> String {
        let file = RegistryFile {
            schema: schema::MODEL_REGISTRY.to_string(),
            model: self.models.values().cloned().collect(),
        };
        toml::to_string(&file).expect("registry serializes")
    }
}
