//! Pipeline, provider and split settings.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::soap::Stage;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("n_ref ({n_ref}) must not exceed n_sim ({n_sim})")]
    RefExceedsSim { n_ref: usize, n_sim: usize },
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("fusion_alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("train_ratio must lie in [0, 1], got {0}")]
    RatioOutOfRange(f64),
    #[error("environment variable {0} is required when mock providers are disabled")]
    MissingEndpoint(&'static str),
}

/// Retrieval, prompting and provider settings shared by the CLI and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Latest visits of the same patient placed in the prompt.
    pub n_hist: usize,
    /// Cross-patient references kept after re-ranking.
    pub n_ref: usize,
    /// Candidates gathered by hybrid retrieval before re-ranking.
    pub n_sim: usize,
    /// Weight of the dense score in the fused score; `1 - alpha` goes to BM25.
    pub fusion_alpha: f64,
    pub rng_seed: u64,
    pub use_self_history: bool,
    pub use_cross_patient: bool,
    /// Prompt budget in estimated tokens (characters / 4).
    pub context_budget_tokens: usize,
    /// Fall back to fused order when the re-ranker fails.
    pub rerank_fallback: bool,
    pub max_tokens: u32,
    pub temperature: f64,
    pub providers: ProviderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_hist: 20,
            n_ref: 10,
            n_sim: 80,
            fusion_alpha: 0.5,
            rng_seed: 0,
            use_self_history: true,
            use_cross_patient: true,
            context_budget_tokens: 60_000,
            rerank_fallback: false,
            max_tokens: 1024,
            temperature: 0.0,
            providers: ProviderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_ref == 0 {
            return Err(ConfigError::ZeroCount("n_ref"));
        }
        if self.n_sim == 0 {
            return Err(ConfigError::ZeroCount("n_sim"));
        }
        if self.n_ref > self.n_sim {
            return Err(ConfigError::RefExceedsSim { n_ref: self.n_ref, n_sim: self.n_sim });
        }
        if !(0.0..=1.0).contains(&self.fusion_alpha) {
            return Err(ConfigError::AlphaOutOfRange(self.fusion_alpha));
        }
        Ok(())
    }
}

/// Which backends answer embedding, re-ranking and generation calls.
///
/// Endpoint URLs and keys for the HTTP providers come from the environment:
/// `MEDPLAN_EMBEDDING_URL`, `MEDPLAN_RERANKER_URL`, `MEDPLAN_GENERATOR_URL`
/// and the matching `*_API_KEY` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mock: bool,
    pub embedding_model: String,
    pub reranker_model: String,
    pub generator_model: String,
    pub embed_batch_size: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub mock_seed: u64,
    /// Dimension of the mock hash embedder.
    pub mock_dim: usize,
    /// Artificial latency added to every mock generation call.
    pub mock_latency_ms: u64,
    /// Makes the mock generator fail every call for the given stage.
    pub mock_fail_stage: Option<Stage>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mock: true,
            embedding_model: "text-embedding-3-large".into(),
            reranker_model: "rerank-2".into(),
            generator_model: "medical-llama3-8b".into(),
            embed_batch_size: 64,
            max_retries: 3,
            backoff_ms: 200,
            max_in_flight: 4,
            timeout_secs: 120,
            mock_seed: 0x5eed,
            mock_dim: 64,
            mock_latency_ms: 0,
            mock_fail_stage: None,
        }
    }
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn backoff(&self) -> Duration {
        Duration::from_millis(self.backoff_ms)
    }
}

/// Patient-centric split of the eligible population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub kb_count: usize,
    pub eval_count: usize,
    /// Fraction of the evaluation patients assigned to training.
    pub train_ratio: f64,
    /// Minimum visits for a patient to be eligible.
    pub min_visits: usize,
    /// Also index the history visits of train/test patients into the
    /// knowledge base. Off by default, which keeps the populations disjoint.
    pub kb_includes_eval_histories: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kb_count: 6000,
            eval_count: 3000,
            train_ratio: 0.8,
            min_visits: 3,
            kb_includes_eval_histories: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.train_ratio) {
            return Err(ConfigError::RatioOutOfRange(self.train_ratio));
        }
        Ok(())
    }
}
