//! TOML run configuration with `[backend]`, `[refinement]`, `[io]` and
//! `[review]` sections. Every key is optional.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{
    Backend, BackendConfig, Gateway, HttpBackend, OracleBackend, OraclePlan, RankingMode, ResponseCache, RetryPolicy,
};
use crate::ingest::{OnMalformed, ReaderConfig, Truncation, TripletSchema, TruncationUnit};
use crate::model::RefinementMode;
use crate::rules::RuleOptions;
use crate::stage1::Normalization;

pub const TOKEN_ENV: &str = "NEGREFINE_API_TOKEN";
pub const CACHE_DIR_ENV: &str = "NEGREFINE_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    /// Deterministic mock answering from an oracle plan file.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_parallel_requests: usize,
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
    pub request_timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    pub auth_header: String,
    pub oracle_plan: Option<PathBuf>,
    pub oracle_delay_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let defaults = BackendConfig::default();
        Self {
            kind: BackendKind::Http,
            endpoint_url: None,
            model_name: defaults.model_name,
            temperature: defaults.temperature,
            max_output_tokens: defaults.max_output_tokens,
            max_parallel_requests: defaults.max_parallel_requests,
            max_retries: defaults.retry.max_retries,
            backoff_ms: defaults.retry.backoff.iter().map(|d| d.as_millis() as u64).collect(),
            request_timeout_secs: 120,
            cache_dir: None,
            auth_header: "Authorization".into(),
            oracle_plan: None,
            oracle_delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSection {
    pub mode: RefinementMode,
    /// Rank full (truncated) passages instead of snippets in Stage 2.
    pub prhn: bool,
    pub filter_above_anchor: bool,
    /// `0` disables truncation.
    pub max_seq_len: usize,
    pub truncation_unit: TruncationUnit,
    /// Instances in flight at once.
    pub instance_window: usize,
    pub nfc: bool,
    pub collapse_whitespace: bool,
}

impl Default for RefinementSection {
    fn default() -> Self {
        Self {
            mode: RefinementMode::RelabelAndFilter,
            prhn: false,
            filter_above_anchor: false,
            max_seq_len: 512,
            truncation_unit: TruncationUnit::Words,
            instance_window: 64,
            nfc: true,
            collapse_whitespace: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoSection {
    #[serde(flatten)]
    pub schema: TripletSchema,
    pub on_malformed: OnMalformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub port: u16,
    pub state_dir: PathBuf,
    pub cors_origin: Option<String>,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self {
            port: 8080,
            state_dir: PathBuf::from("review-sessions"),
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendSection,
    pub refinement: RefinementSection,
    pub io: IoSection,
    pub review: ReviewSection,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// `load` when a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.backend;
        if !(b.temperature >= 0.0) {
            return Err(ConfigError::Invalid(format!("temperature must be >= 0, got {}", b.temperature)));
        }
        if b.max_parallel_requests == 0 {
            return Err(ConfigError::Invalid("max_parallel_requests must be >= 1".into()));
        }
        if self.refinement.instance_window == 0 {
            return Err(ConfigError::Invalid("instance_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn reader_config(&self) -> ReaderConfig {
        let r = &self.refinement;
        ReaderConfig {
            schema: self.io.schema.clone(),
            truncation: (r.max_seq_len > 0).then_some(Truncation {
                max_seq_len: r.max_seq_len,
                unit: r.truncation_unit,
            }),
            on_malformed: self.io.on_malformed,
        }
    }

    pub fn ranking_mode(&self) -> RankingMode {
        if self.refinement.prhn {
            RankingMode::PassageCentric
        } else {
            RankingMode::SnippetCentric
        }
    }

    pub fn rule_options(&self) -> RuleOptions {
        RuleOptions {
            filter_above_anchor: self.refinement.filter_above_anchor,
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            nfc: self.refinement.nfc,
            collapse_whitespace: self.refinement.collapse_whitespace,
        }
    }

    pub fn backend_config(&self) -> BackendConfig {
        let b = &self.backend;
        BackendConfig {
            model_name: b.model_name.clone(),
            temperature: b.temperature,
            max_output_tokens: b.max_output_tokens,
            max_parallel_requests: b.max_parallel_requests,
            retry: RetryPolicy {
                max_retries: b.max_retries,
                backoff: b.backoff_ms.iter().map(|&ms| Duration::from_millis(ms)).collect(),
            },
        }
    }

    /// Cache directory after applying the environment override.
    pub fn cache_dir(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.backend.cache_dir.clone())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        let b = &self.backend;
        match b.kind {
            BackendKind::Http => {
                let url = b
                    .endpoint_url
                    .as_deref()
                    .ok_or_else(|| ConfigError::Invalid("backend.endpoint_url is required for kind = \"http\"".into()))?;
                let mut backend = HttpBackend::new(url, Duration::from_secs(b.request_timeout_secs))
                    .map_err(|e| ConfigError::Backend(e.to_string()))?;
                if let Ok(token) = std::env::var(TOKEN_ENV) {
                    backend = backend
                        .with_auth(&b.auth_header, &token)
                        .map_err(|e| ConfigError::Backend(e.to_string()))?;
                }
                Ok(Arc::new(backend))
            }
            BackendKind::Oracle => {
                let path = b
                    .oracle_plan
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("backend.oracle_plan is required for kind = \"oracle\"".into()))?;
                let plan = OraclePlan::read_jsonl(path)
                    .map_err(|e| ConfigError::Backend(format!("{}: {e}", path.display())))?;
                let backend = OracleBackend::new(plan)
                    .map_err(|e| ConfigError::Backend(e.to_string()))?
                    .with_delay(Duration::from_millis(b.oracle_delay_ms));
                Ok(Arc::new(backend))
            }
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let gateway = Gateway::new(self.build_backend()?, self.backend_config()).map_err(ConfigError::Invalid)?;
        Ok(match self.cache_dir() {
            Some(dir) => gateway.with_cache(
                ResponseCache::new(&dir).map_err(|e| ConfigError::Backend(format!("{}: {e}", dir.display())))?,
            ),
            None => gateway,
        })
    }
}
