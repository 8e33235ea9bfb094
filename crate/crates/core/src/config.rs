//! TOML configuration with `section.key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenger::{MutationPlan, MutationRelation, DEFAULT_CLAUSES};
use crate::decider::{Hyperparams, ModelKind};
use crate::embedder::{CachedProvider, EmbeddingProvider, HashedBowProvider, RemoteEmbeddingProvider, HASHED_BOW_DIM};
use crate::enquirer::EnquiryStyle;
use crate::gateway::{
    ChatBackend, GenerationParams, MockBackend, OpenAiBackend, ReplayBackend, RetryPolicy, DEFAULT_API_KEY_ENV,
    DEFAULT_MODEL,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid override {0:?}: expected section.key=value")]
    OverrideSyntax(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Openai,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Chat-completions URL, posted to as is.
    pub endpoint: String,
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    /// Directory of recorded transcripts for the replay backend.
    pub replay_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 60,
            max_retries: 3,
            retry_base_ms: 1000,
            replay_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    /// Embeddings URL, posted to as is.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashed,
            dim: HASHED_BOW_DIM,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChallengerConfig {
    pub clauses: Vec<String>,
    /// Relation for Why, How and Really.
    pub relations: [MutationRelation; 3],
    /// Knowledge base for MR1, a JSON array of `{sentence, source_id}`.
    pub kb_path: Option<PathBuf>,
    /// After a batch, append its basic questions to `kb_path`.
    pub accumulate_kb: bool,
}

impl Default for ChallengerConfig {
    fn default() -> Self {
        let plan = MutationPlan::default();
        Self {
            clauses: DEFAULT_CLAUSES.iter().map(|s| s.to_string()).collect(),
            relations: plan.relations,
            kb_path: None,
            accumulate_kb: false,
        }
    }
}

impl ChallengerConfig {
    pub fn plan(&self) -> MutationPlan {
        MutationPlan {
            clauses: self.clauses.clone(),
            relations: self.relations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeciderConfig {
    pub model_kind: ModelKind,
    pub folds: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for DeciderConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            model_kind: ModelKind::LinearSvm,
            folds: 10,
            l2: hp.l2,
            learning_rate: hp.learning_rate,
            epochs: hp.epochs,
            class_weighting: hp.class_weighting,
            seed: hp.seed,
        }
    }
}

impl DeciderConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            l2: self.l2,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            class_weighting: self.class_weighting,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Interrogations in flight at once.
    pub concurrency: usize,
    pub enquiry_style: EnquiryStyle,
    /// Stamp records with time 0 instead of the wall clock.
    pub fixed_clock: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            enquiry_style: EnquiryStyle::Json,
            fixed_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub challenger: ChallengerConfig,
    pub decider: DeciderConfig,
    pub pipeline: PipelineConfig,
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Applies `section.key=value` overrides. Values are read as TOML
    /// literals, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut root = toml::Table::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::OverrideSyntax(o.into()))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::OverrideSyntax(o.into()))?;
            let table = root
                .get_mut(section)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown section {section:?}")))?;
            table.insert(field.to_string(), parse_override_value(raw.trim()));
        }
        let c: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.challenger
            .plan()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.decider
            .hyperparams()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.pipeline.concurrency == 0 {
            return Err(ConfigError::Invalid("pipeline.concurrency must be >= 1".into()));
        }
        if self.embedder.dim == 0 {
            return Err(ConfigError::Invalid("embedder.dim must be >= 1".into()));
        }
        if self.backend.kind == BackendKind::Replay && self.backend.replay_dir.is_none() {
            return Err(ConfigError::Invalid(
                "backend.replay_dir is required for the replay backend".into(),
            ));
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            model_name: self.backend.model.clone(),
            temperature: self.backend.temperature,
            max_tokens: self.backend.max_tokens,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.backend.max_retries,
            base_delay: Duration::from_millis(self.backend.retry_base_ms),
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        let b = &self.backend;
        let invalid = |e: crate::gateway::GatewayError| ConfigError::Invalid(e.to_string());
        Ok(match b.kind {
            BackendKind::Mock => Arc::new(MockBackend::synthetic()),
            BackendKind::Openai => Arc::new(
                OpenAiBackend::from_env(b.endpoint.clone(), &b.api_key_env, Duration::from_secs(b.timeout_secs))
                    .map_err(invalid)?,
            ),
            BackendKind::Replay => {
                let dir = b.replay_dir.as_deref().expect("validated");
                Arc::new(ReplayBackend::from_dir(dir).map_err(invalid)?)
            }
        })
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        let e = &self.embedder;
        let invalid = |err: crate::embedder::EmbedError| ConfigError::Invalid(err.to_string());
        Ok(match (e.kind, &e.cache_dir) {
            (EmbedderKind::Hashed, _) => Arc::new(HashedBowProvider::new(e.dim)),
            (EmbedderKind::Remote, cache) => {
                let key = std::env::var(&e.api_key_env).ok();
                let remote = RemoteEmbeddingProvider::new(
                    e.endpoint.clone(),
                    e.model.clone(),
                    key,
                    e.dim,
                    Duration::from_secs(e.timeout_secs),
                )
                .map_err(invalid)?;
                match cache {
                    Some(dir) => Arc::new(CachedProvider::on_disk(remote, dir).map_err(invalid)?),
                    None => Arc::new(CachedProvider::in_memory(remote)),
                }
            }
        })
    }
}
