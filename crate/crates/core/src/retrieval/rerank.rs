use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::fusion::RetrievalCandidate;
use super::index::RetrievalIndex;
use super::RetrievalError;
use crate::config::ConfigError;
use crate::provider::{HttpEndpoint, ProviderError, RetryPolicy};
use crate::text::tokenize;

/// Cross-encoder: scores each document jointly with the query.
pub trait Reranker: Send + Sync {
    fn tag(&self) -> &str;
    /// One relevance score per document, in input order.
    fn score(&self, query: &str, documents: &[&str]) -> Result<Vec<f64>, ProviderError>;
}

/// Offline re-ranker scoring token-overlap F1 between query and key.
#[derive(Debug, Clone, Default)]
pub struct OverlapReranker;

impl OverlapReranker {
    pub fn overlap_f1(query: &str, document: &str) -> f64 {
        let q = tokenize(query);
        let d = tokenize(document);
        if q.is_empty() || d.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, i64> = HashMap::new();
        for t in &d {
            *counts.entry(t).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in &q {
            if let Some(n) = counts.get_mut(t.as_str()) {
                if *n > 0 {
                    *n -= 1;
                    overlap += 1;
                }
            }
        }
        if overlap == 0 {
            return 0.0;
        }
        let p = overlap as f64 / d.len() as f64;
        let r = overlap as f64 / q.len() as f64;
        2.0 * p * r / (p + r)
    }
}

impl Reranker for OverlapReranker {
    fn tag(&self) -> &str {
        "mock-overlap-f1"
    }

    fn score(&self, query: &str, documents: &[&str]) -> Result<Vec<f64>, ProviderError> {
        Ok(documents.iter().map(|d| Self::overlap_f1(query, d)).collect())
    }
}

/// Re-ranking API speaking `POST {query, documents, top_k}` →
/// `{results: [{index, relevance_score}]}`.
#[derive(Debug, Clone)]
pub struct HttpReranker {
    endpoint: HttpEndpoint,
    tag: String,
}

#[derive(Serialize)]
struct Request<'a> {
    query: &'a str,
    documents: &'a [&'a str],
    top_k: usize,
}

#[derive(Deserialize)]
struct Response {
    results: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    index: usize,
    relevance_score: f64,
}

impl HttpReranker {
    pub fn new(endpoint: HttpEndpoint, tag: impl Into<String>) -> Self {
        HttpReranker { endpoint, tag: tag.into() }
    }

    pub fn from_env(model: &str, timeout: Duration) -> Result<Self, ConfigError> {
        let endpoint = HttpEndpoint::from_env("MEDPLAN_RERANKER", "MEDPLAN_RERANKER_URL", timeout)?;
        Ok(HttpReranker::new(endpoint, model))
    }
}

impl Reranker for HttpReranker {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn score(&self, query: &str, documents: &[&str]) -> Result<Vec<f64>, ProviderError> {
        let resp: Response = self.endpoint.post(&Request { query, documents, top_k: documents.len() })?;
        let mut scores = vec![None; documents.len()];
        for item in resp.results {
            let slot = scores
                .get_mut(item.index)
                .ok_or_else(|| ProviderError::Malformed(format!("result index {} out of range", item.index)))?;
            *slot = Some(item.relevance_score);
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| ProviderError::Malformed(format!("document {i} was not scored"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub candidates: Vec<RetrievalCandidate>,
    /// The re-ranker failed and the fused order was kept instead.
    pub fallback_used: bool,
}

/// Scores every candidate's key text against `query` and keeps the top
/// `n_ref` by re-rank score (ties by ascending doc_id). An empty pool never
/// reaches the provider.
pub fn rerank(
    query: &str,
    candidates: Vec<RetrievalCandidate>,
    index: &RetrievalIndex,
    reranker: &dyn Reranker,
    n_ref: usize,
    retry: &RetryPolicy,
    fallback_to_fused: bool,
) -> Result<RerankOutcome, RetrievalError> {
    if candidates.is_empty() {
        return Ok(RerankOutcome { candidates, fallback_used: false });
    }
    let keys: Vec<&str> = candidates
        .iter()
        .map(|c| {
            index
                .get(&c.doc_id)
                .map(|d| d.key_text.as_str())
                .ok_or_else(|| super::IndexError::UnknownDoc(c.doc_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let scores = match retry.run(|| reranker.score(query, &keys)) {
        Ok(s) if s.len() == keys.len() => s,
        Ok(s) => {
            return Err(RetrievalError::Rerank(ProviderError::Malformed(format!(
                "{} scores for {} documents",
                s.len(),
                keys.len()
            ))))
        }
        Err(e) if fallback_to_fused => {
            tracing::warn!(error = %e, "re-ranker failed; keeping fused order");
            let mut candidates = candidates;
            candidates.truncate(n_ref);
            return Ok(RerankOutcome { candidates, fallback_used: true });
        }
        Err(e) => return Err(RetrievalError::Rerank(e)),
    };
    let mut out: Vec<RetrievalCandidate> = candidates
        .into_iter()
        .zip(scores)
        .map(|(mut c, s)| {
            c.rerank_score = Some(s);
            c
        })
        .collect();
    out.sort_by(|a, b| {
        let (sa, sb) = (a.rerank_score.unwrap_or(f64::MIN), b.rerank_score.unwrap_or(f64::MIN));
        sb.total_cmp(&sa).then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    out.truncate(n_ref);
    Ok(RerankOutcome { candidates: out, fallback_used: false })
}
