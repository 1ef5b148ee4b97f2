//! Text-embedding providers behind one gateway.
//!
//! The gateway validates inputs, splits them into provider batches, retries
//! transient failures, bounds concurrent requests and checks that every
//! returned vector is finite and of a consistent dimension.

mod http;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpEmbedder;
pub use mock::HashEmbedder;

use crate::config::{ConfigError, ProviderConfig};
use crate::par::Execution;
use crate::provider::{InFlightLimit, ProviderError, RetryPolicy};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_tag: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_tag: impl Into<String>) -> Self {
        EmbeddingVector { values, provider_tag: provider_tag.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    Document,
    Query,
    /// A single token, embedded on its own. Used for token sequences.
    Token,
}

/// A backend that maps one batch of texts to one vector per text.
pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn embed_batch(&self, texts: &[String], kind: EmbedKind) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("text {index} is empty")]
    EmptyText { index: usize },
    #[error("no texts to embed")]
    EmptyBatch,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("provider returned dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("provider returned a non-finite or zero vector")]
    BadVector,
}

impl EmbeddingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Provider(e) if e.is_retryable())
    }
}

pub struct EmbeddingGateway {
    provider: Arc<dyn EmbeddingProvider>,
    batch_size: usize,
    retry: RetryPolicy,
    limit: InFlightLimit,
    exec: Execution,
}

impl std::fmt::Debug for EmbeddingGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingGateway")
            .field("provider", &self.provider.tag())
            .field("batch_size", &self.batch_size)
            .finish()
    }
}

impl EmbeddingGateway {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, batch_size: usize, retry: RetryPolicy, max_in_flight: usize) -> Self {
        EmbeddingGateway {
            provider,
            batch_size: batch_size.max(1),
            retry,
            limit: InFlightLimit::new(max_in_flight),
            exec: Execution::default(),
        }
    }

    /// Gateway over the deterministic hash embedder.
    pub fn mock(seed: u64, dim: usize) -> Self {
        EmbeddingGateway::new(Arc::new(HashEmbedder::new(seed, dim)), 64, RetryPolicy::none(), 4)
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ConfigError> {
        let retry = RetryPolicy { max_retries: cfg.max_retries, base_delay: cfg.backoff() };
        let provider: Arc<dyn EmbeddingProvider> = if cfg.mock {
            Arc::new(HashEmbedder::new(cfg.mock_seed, cfg.mock_dim))
        } else {
            Arc::new(HttpEmbedder::from_env(&cfg.embedding_model, cfg.timeout())?)
        };
        Ok(EmbeddingGateway::new(provider, cfg.embed_batch_size, retry, cfg.max_in_flight))
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn tag(&self) -> &str {
        self.provider.tag()
    }

    /// One vector per text, in input order.
    pub fn embed_texts(&self, texts: &[String], kind: EmbedKind) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Err(EmbeddingError::EmptyBatch);
        }
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText { index });
        }
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = self.exec.try_map(&batches, |batch| self.embed_one_batch(batch, kind))?;
        let tag = self.provider.tag().to_string();
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for values in results.into_iter().flatten() {
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected {
                return Err(EmbeddingError::DimMismatch { expected, got: values.len() });
            }
            out.push(EmbeddingVector::new(values, tag.clone()));
        }
        Ok(out)
    }

    pub fn embed_text(&self, text: &str, kind: EmbedKind) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.embed_texts(&[text.to_string()], kind)?.remove(0))
    }

    /// Per-token vectors of `text` under the engine tokenizer. Empty when the
    /// text has no tokens.
    pub fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        self.embed_texts(&tokens, EmbedKind::Token)
    }

    fn embed_one_batch(&self, batch: &[String], kind: EmbedKind) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let vectors = {
            let _permit = self.limit.acquire();
            self.retry.run(|| self.provider.embed_batch(batch, kind))?
        };
        if vectors.len() != batch.len() {
            return Err(EmbeddingError::CountMismatch { expected: batch.len(), got: vectors.len() });
        }
        if vectors.iter().any(|v| v.is_empty() || v.iter().any(|x| !x.is_finite()) || norm(v) == 0.0) {
            return Err(EmbeddingError::BadVector);
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn texts(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mock_gateway_is_deterministic() {
        let g = EmbeddingGateway::mock(1, 64);
        let a = g.embed_texts(&texts(&["abc"]), EmbedKind::Document).unwrap();
        let b = g.embed_texts(&texts(&["abc"]), EmbedKind::Document).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].dim(), 64);
        let v = g.embed_text("chest pain", EmbedKind::Query).unwrap();
        assert!((v.cosine(&v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_text_before_dispatch() {
        let g = EmbeddingGateway::mock(1, 8);
        assert_eq!(
            g.embed_texts(&texts(&["ok", ""]), EmbedKind::Document),
            Err(EmbeddingError::EmptyText { index: 1 })
        );
        assert_eq!(g.embed_texts(&[], EmbedKind::Document), Err(EmbeddingError::EmptyBatch));
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl EmbeddingProvider for Flaky {
        fn tag(&self) -> &str {
            "flaky"
        }
        fn embed_batch(&self, texts: &[String], _: EmbedKind) -> Result<Vec<Vec<f64>>, ProviderError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                return Err(ProviderError::Unavailable("down".into()));
            }
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    #[test]
    fn batches_preserve_order_and_retry() {
        let p = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 1 });
        let retry = RetryPolicy { max_retries: 2, base_delay: std::time::Duration::ZERO };
        let g = EmbeddingGateway::new(p.clone(), 2, retry, 1).with_execution(Execution::Sequential);
        let out = g.embed_texts(&texts(&["a", "bb", "ccc", "dddd", "eeeee"]), EmbedKind::Document).unwrap();
        let lens: Vec<f64> = out.iter().map(|v| v.values[0]).collect();
        assert_eq!(lens, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        // 3 batches plus one retried failure.
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn unreachable_provider_is_retryable() {
        let p = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: usize::MAX });
        let g = EmbeddingGateway::new(p, 8, RetryPolicy::none(), 1);
        let err = g.embed_text("abc", EmbedKind::Query).unwrap_err();
        assert!(err.is_retryable());
        assert!(!EmbeddingError::EmptyText { index: 0 }.is_retryable());
    }

    #[test]
    fn token_sequences_follow_the_tokenizer() {
        let g = EmbeddingGateway::mock(1, 16);
        let toks = g.embed_tokens("Chest pain, chest").unwrap();
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0], toks[2]);
        assert!(g.embed_tokens("...").unwrap().is_empty());
    }
}
