use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedKind, EmbeddingProvider};
use crate::config::ConfigError;
use crate::provider::{HttpEndpoint, ProviderError};

/// Embedding API speaking `POST {model, input}` → `{data: [{embedding}]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    model: String,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        HttpEmbedder { endpoint, model: model.into() }
    }

    pub fn from_env(model: &str, timeout: Duration) -> Result<Self, ConfigError> {
        let endpoint = HttpEndpoint::from_env("MEDPLAN_EMBEDDING", "MEDPLAN_EMBEDDING_URL", timeout)?;
        Ok(HttpEmbedder::new(endpoint, model))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String], _kind: EmbedKind) -> Result<Vec<Vec<f64>>, ProviderError> {
        let resp: Response = self.endpoint.post(&Request { model: &self.model, input: texts })?;
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}
