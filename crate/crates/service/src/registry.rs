use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ner_core::embeddings::EmbeddingStore;
use ner_core::model::NerModel;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("invalid registry config: {0}")]
    Config(String),
    #[error("model `{name}`: {source}")]
    Load { name: String, source: ner_core::Error },
    #[error("model `{name}` expects {expected}-dimensional word vectors, {path} has {actual}")]
    DimensionMismatch {
        name: String,
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
}

/// Registry file contents:
///
/// ```toml
/// [[model]]
/// name = "germeval-outer"
/// path = "models/germeval-outer.mner"
/// embeddings = "vectors/de.ftxt"
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryConfig {
    #[serde(rename = "model")]
    pub models: Vec<ModelEntry>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub path: PathBuf,
    pub embeddings: PathBuf,
}

impl RegistryConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::ReadConfig {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RegistryConfig = toml::from_str(&text).map_err(|e| RegistryError::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            for m in &mut config.models {
                m.path = dir.join(&m.path);
                m.embeddings = dir.join(&m.embeddings);
            }
        }
        Ok(config)
    }
}

/// A loaded model with the word vectors it was trained against.
#[derive(Debug)]
pub struct ServedModel {
    pub model: NerModel,
    pub store: Arc<EmbeddingStore>,
}

/// Immutable set of named models.
#[derive(Debug, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<ServedModel>>,
}

impl ModelRegistry {
    /// Loads every model; fails if any of them cannot be loaded. Models
    /// naming the same embedding file share one copy.
    pub fn load(config: &RegistryConfig) -> Result<Self, RegistryError> {
        let mut stores: HashMap<PathBuf, Arc<EmbeddingStore>> = HashMap::new();
        let mut registry = ModelRegistry::default();
        for entry in &config.models {
            if registry.models.contains_key(&entry.name) {
                return Err(RegistryError::Config(format!("duplicate model name `{}`", entry.name)));
            }
            let load_err = |source| RegistryError::Load {
                name: entry.name.clone(),
                source,
            };
            let model = NerModel::load(&entry.path).map_err(load_err)?;
            let store = match stores.get(&entry.embeddings) {
                Some(s) => s.clone(),
                None => {
                    log::info!("loading word vectors {}", entry.embeddings.display());
                    let s = Arc::new(EmbeddingStore::load(&entry.embeddings).map_err(load_err)?);
                    stores.insert(entry.embeddings.clone(), s.clone());
                    s
                }
            };
            if store.dim() != model.config.word_dim {
                return Err(RegistryError::DimensionMismatch {
                    name: entry.name.clone(),
                    path: entry.embeddings.clone(),
                    expected: model.config.word_dim,
                    actual: store.dim(),
                });
            }
            log::info!("registered model `{}` ({} parameters)", entry.name, model.num_parameters());
            registry.insert(&entry.name, model, store);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, name: &str, model: NerModel, store: Arc<EmbeddingStore>) {
        self.models.insert(name.to_string(), Arc::new(ServedModel { model, store }));
    }

    pub fn get(&self, name: &str) -> Option<Arc<ServedModel>> {
        self.models.get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}
