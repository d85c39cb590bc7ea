//! Environment-driven construction of a [`Platform`].
//!
//! | variable | default |
//! |---|---|
//! | `XAI_STORAGE` | `fs` (`fs`, `memory`, `s3`) |
//! | `XAI_DATA_DIR` | `./xai-data` |
//! | `XAI_S3_ENDPOINT`, `XAI_S3_ACCESS_KEY`, `XAI_S3_SECRET_KEY` | required for `s3` |
//! | `XAI_S3_REGION` | `us-east-1` |
//! | `XAI_S3_BUCKET_PREFIX` | `xai-` |
//! | `XAI_CLASSIFIER_URL`, `XAI_CLASSIFIER_LABELS`, `XAI_CLASSIFIER_ID` | built-in lexicon model |
//! | `XAI_EMBEDDER` | `hashing` (`hashing`, `remote`) |
//! | `XAI_EMBEDDER_URL`, `XAI_EMBEDDER_API_KEY`, `XAI_EMBEDDER_MODEL`, `XAI_EMBEDDER_DIM` | for `remote` |
//! | `XAI_GENERATOR_URL`, `XAI_GENERATOR_API_KEY`, `XAI_GENERATOR_MODEL` | extractive generator |

use std::path::PathBuf;
use std::sync::Arc;

use crate::index::{Embedder, HashingEmbedder, RemoteEmbedder};
use crate::model::{LexiconClassifier, RemoteClassifier, TextClassifier};
use crate::platform::{Platform, PlatformError};
use crate::rag::{AnswerGenerator, ChatCompletionGenerator, ExtractiveGenerator};
use crate::store::{FsBackend, MemoryBackend, S3Backend, S3Config, StorageBackend};

#[derive(Debug, Clone, PartialEq)]
pub enum StorageConfig {
    Fs(PathBuf),
    Memory,
    S3(S3Config),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierConfig {
    Lexicon,
    Remote { identifier: String, url: String, labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderConfig {
    Hashing,
    Remote { url: String, api_key: Option<String>, model: String, dimension: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorConfig {
    Extractive,
    ChatCompletion { url: String, api_key: String, model: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformConfig {
    pub storage: StorageConfig,
    pub classifier: ClassifierConfig,
    pub embedder: EmbedderConfig,
    pub generator: GeneratorConfig,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            storage: StorageConfig::Fs(PathBuf::from("./xai-data")),
            classifier: ClassifierConfig::Lexicon,
            embedder: EmbedderConfig::Hashing,
            generator: GeneratorConfig::Extractive,
        }
    }
}

fn config_err(msg: impl Into<String>) -> PlatformError {
    PlatformError::Config(msg.into())
}

impl PlatformConfig {
    pub fn from_env() -> Result<Self, PlatformError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, PlatformError> {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        let require = |k: &str| get(k).ok_or_else(|| config_err(format!("{k} is required")));

        let storage = match get("XAI_STORAGE").as_deref().unwrap_or("fs") {
            "fs" => StorageConfig::Fs(PathBuf::from(get("XAI_DATA_DIR").unwrap_or_else(|| "./xai-data".into()))),
            "memory" => StorageConfig::Memory,
            "s3" => StorageConfig::S3(S3Config {
                endpoint: require("XAI_S3_ENDPOINT")?,
                region: get("XAI_S3_REGION").unwrap_or_else(|| "us-east-1".into()),
                access_key: require("XAI_S3_ACCESS_KEY")?,
                secret_key: require("XAI_S3_SECRET_KEY")?,
                bucket_prefix: lookup("XAI_S3_BUCKET_PREFIX").unwrap_or_else(|| "xai-".into()),
            }),
            other => return Err(config_err(format!("unknown XAI_STORAGE {other:?}"))),
        };

        let classifier = match get("XAI_CLASSIFIER_URL") {
            None => ClassifierConfig::Lexicon,
            Some(url) => ClassifierConfig::Remote {
                identifier: get("XAI_CLASSIFIER_ID").unwrap_or_else(|| "remote-classifier".into()),
                url,
                labels: require("XAI_CLASSIFIER_LABELS")?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
            },
        };

        let embedder = match get("XAI_EMBEDDER").as_deref().unwrap_or("hashing") {
            "hashing" => EmbedderConfig::Hashing,
            "remote" => {
                let dim = require("XAI_EMBEDDER_DIM")?;
                EmbedderConfig::Remote {
                    url: require("XAI_EMBEDDER_URL")?,
                    api_key: get("XAI_EMBEDDER_API_KEY"),
                    model: get("XAI_EMBEDDER_MODEL").unwrap_or_default(),
                    dimension: dim
                        .parse()
                        .ok()
                        .filter(|d| *d > 0)
                        .ok_or_else(|| config_err(format!("XAI_EMBEDDER_DIM must be a positive integer, got {dim:?}")))?,
                }
            }
            other => return Err(config_err(format!("unknown XAI_EMBEDDER {other:?}"))),
        };

        let generator = match (get("XAI_GENERATOR_URL"), get("XAI_GENERATOR_API_KEY")) {
            (Some(url), Some(api_key)) => GeneratorConfig::ChatCompletion {
                url,
                api_key,
                model: get("XAI_GENERATOR_MODEL").unwrap_or_else(|| "gpt-4o-mini".into()),
            },
            (Some(_), None) => return Err(config_err("XAI_GENERATOR_URL is set without XAI_GENERATOR_API_KEY")),
            _ => GeneratorConfig::Extractive,
        };

        Ok(Self { storage, classifier, embedder, generator })
    }

    pub fn build(&self) -> Result<Platform, PlatformError> {
        let backend: Arc<dyn StorageBackend> = match &self.storage {
            StorageConfig::Fs(root) => Arc::new(FsBackend::new(root)?),
            StorageConfig::Memory => Arc::new(MemoryBackend::default()),
            StorageConfig::S3(cfg) => Arc::new(S3Backend::new(cfg.clone())?),
        };
        let classifier: Arc<dyn TextClassifier> = match &self.classifier {
            ClassifierConfig::Lexicon => Arc::new(LexiconClassifier::financial()),
            ClassifierConfig::Remote { identifier, url, labels } => {
                if labels.is_empty() {
                    return Err(config_err("XAI_CLASSIFIER_LABELS is empty"));
                }
                Arc::new(RemoteClassifier::new(identifier.clone(), url.clone(), labels.clone()))
            }
        };
        let embedder: Arc<dyn Embedder> = match &self.embedder {
            EmbedderConfig::Hashing => Arc::new(HashingEmbedder::default()),
            EmbedderConfig::Remote { url, api_key, model, dimension } => {
                Arc::new(RemoteEmbedder::new(url.clone(), api_key.clone(), model.clone(), *dimension))
            }
        };
        let generator: Arc<dyn AnswerGenerator> = match &self.generator {
            GeneratorConfig::Extractive => Arc::new(ExtractiveGenerator),
            GeneratorConfig::ChatCompletion { url, api_key, model } => {
                Arc::new(ChatCompletionGenerator::new(url.clone(), api_key.clone(), model.clone()))
            }
        };
        Ok(Platform::new(backend, embedder, classifier, generator))
    }
}
