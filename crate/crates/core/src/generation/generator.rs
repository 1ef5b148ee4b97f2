use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::prompt::PromptBundle;
use super::GenerationError;
use crate::config::{ConfigError, PipelineConfig};
use crate::provider::{HttpEndpoint, ProviderError, RetryPolicy};
use crate::retrieval::ReferenceBundle;
use crate::soap::{SoapNote, Stage};
use crate::text::normalize_text;

/// Output of the mock generator when the prompt holds no usable reference.
pub const NO_REFERENCE_SENTINEL: &str = "NO-REFERENCE-BASELINE";

/// One completion request. `top_reference` and `latest_visit` point at the
/// context that actually made it into the prompt; HTTP providers ignore them.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub system: &'a str,
    pub prompt: &'a str,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stage: Stage,
    pub top_reference: Option<&'a SoapNote>,
    pub latest_visit: Option<&'a SoapNote>,
}

pub trait Generator: Send + Sync {
    fn tag(&self) -> &str;
    fn complete(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError>;
}

/// Deterministic stand-in for a generator model: echoes the A (or P) of the
/// top-ranked cross-patient reference, else of the most recent self-history
/// visit, else [`NO_REFERENCE_SENTINEL`].
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    pub latency: Duration,
    pub fail_stage: Option<Stage>,
}

impl MockGenerator {
    pub fn new() -> Self {
        MockGenerator::default()
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn failing(mut self, stage: Option<Stage>) -> Self {
        self.fail_stage = stage;
        self
    }
}

fn field(note: &SoapNote, stage: Stage) -> &str {
    match stage {
        Stage::Assessment => &note.assessment,
        Stage::Plan => &note.plan,
    }
}

impl Generator for MockGenerator {
    fn tag(&self) -> &str {
        "mock-echo"
    }

    fn complete(&self, req: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if self.fail_stage == Some(req.stage) {
            return Err(ProviderError::Rejected(format!("mock generator forced to fail at the {} stage", req.stage)));
        }
        let text = [req.top_reference, req.latest_visit]
            .into_iter()
            .flatten()
            .map(|n| field(n, req.stage))
            .find(|t| !t.is_empty())
            .unwrap_or(NO_REFERENCE_SENTINEL);
        Ok(text.to_string())
    }
}

/// Generator API speaking `POST {system, prompt, max_tokens, temperature}` → `{text}`.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: HttpEndpoint,
    tag: String,
}

#[derive(Serialize)]
struct Request<'a> {
    system: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

impl HttpGenerator {
    pub fn new(endpoint: HttpEndpoint, tag: impl Into<String>) -> Self {
        HttpGenerator { endpoint, tag: tag.into() }
    }

    pub fn from_env(model: &str, timeout: Duration) -> Result<Self, ConfigError> {
        let endpoint = HttpEndpoint::from_env("MEDPLAN_GENERATOR", "MEDPLAN_GENERATOR_URL", timeout)?;
        Ok(HttpGenerator::new(endpoint, model))
    }
}

impl Generator for HttpGenerator {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, req: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let resp: Response = self.endpoint.post(&Request {
            system: req.system,
            prompt: req.prompt,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        })?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub stage: Stage,
    /// Normalized completion text.
    pub text: String,
    pub provider_tag: String,
    pub prompt_fingerprint: String,
    pub references_used: Vec<String>,
    pub elapsed_ms: u64,
}

/// Sends `prompt` to `generator`, retrying transient failures and empty
/// completions.
pub fn generate(
    prompt: &PromptBundle,
    bundle: &ReferenceBundle,
    generator: &dyn Generator,
    config: &PipelineConfig,
    retry: &RetryPolicy,
) -> Result<GenerationResult, GenerationError> {
    let started = Instant::now();
    let top_reference = prompt
        .references_used
        .first()
        .and_then(|id| bundle.cross_patient.iter().find(|r| &r.doc_id == id))
        .map(|r| &r.note);
    let visible_history: Vec<&SoapNote> = prompt
        .history_used
        .iter()
        .filter_map(|seq| bundle.self_history.iter().find(|n| n.visit_seq == *seq))
        .collect();
    let latest_visit = visible_history
        .iter()
        .copied()
        .find(|n| !field(n, prompt.stage).is_empty())
        .or_else(|| visible_history.first().copied());
    let request = GenerationRequest {
        system: &prompt.role_instruction,
        prompt: &prompt.user_prompt,
        max_tokens: config.max_tokens,
        temperature: config.temperature,
        stage: prompt.stage,
        top_reference,
        latest_visit,
    };
    let text = retry.run(|| {
        let text = normalize_text(&generator.complete(&request)?);
        if text.is_empty() {
            Err(ProviderError::EmptyCompletion)
        } else {
            Ok(text)
        }
    })?;
    Ok(GenerationResult {
        stage: prompt.stage,
        text,
        provider_tag: generator.tag().to_string(),
        prompt_fingerprint: prompt.fingerprint(),
        references_used: prompt.references_used.clone(),
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}
