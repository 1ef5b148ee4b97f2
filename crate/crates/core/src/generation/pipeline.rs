use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::generator::{generate, GenerationResult, Generator, HttpGenerator, MockGenerator};
use super::prompt::{assemble_prompt, PromptBundle, PromptKind};
use super::GenerationError;
use crate::config::{ConfigError, PipelineConfig};
use crate::embedding::EmbeddingGateway;
use crate::provider::RetryPolicy;
use crate::retrieval::{
    HttpReranker, KnowledgeBase, OverlapReranker, PatientContext, ReferenceBundle, Reranker, RetrievalError,
    RetrievalQuery, Retriever,
};
use crate::soap::{validate_assessment, validate_inputs, RejectReason, Stage};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

impl StageError {
    /// True when an external provider (embedding, re-ranker, generator) failed.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            StageError::Retrieval(RetrievalError::Embedding(_) | RetrievalError::Rerank(_)) => true,
            StageError::Retrieval(_) => false,
            StageError::Generation(GenerationError::Provider(_)) => true,
            StageError::Generation(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    InvalidInput(RejectReason),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
        /// Output of the stages that completed before the failure.
        partial: Option<Box<StageOutput>>,
    },
}

impl PipelineError {
    pub fn failed_stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::InvalidInput(_) => None,
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(self, PipelineError::Stage { source, .. } if source.is_provider_failure())
    }
}

/// Retrieval, prompt and completion of one stage, kept together for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub kind: PromptKind,
    pub bundle: ReferenceBundle,
    pub prompt: PromptBundle,
    pub result: GenerationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageOutput {
    pub assessment: StageOutput,
    pub plan: StageOutput,
}

/// Retrieval plus generation, cheap to clone and share across threads.
#[derive(Clone)]
pub struct Pipeline {
    config: Arc<PipelineConfig>,
    retriever: Retriever,
    generator: Arc<dyn Generator>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("generator", &self.generator.tag())
            .field("reranker", &self.retriever.reranker.tag())
            .field("embeddings", &self.retriever.embeddings.tag())
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        kb: Arc<KnowledgeBase>,
        embeddings: Arc<EmbeddingGateway>,
        reranker: Arc<dyn Reranker>,
        generator: Arc<dyn Generator>,
    ) -> Self {
        let retry = RetryPolicy { max_retries: config.providers.max_retries, base_delay: config.providers.backoff() };
        Pipeline {
            retriever: Retriever { kb, embeddings, reranker, retry },
            config: Arc::new(config),
            generator,
            retry,
        }
    }

    /// Providers chosen by `config.providers`: the offline mocks, or the HTTP
    /// clients configured through the environment.
    pub fn from_config(config: PipelineConfig, kb: Arc<KnowledgeBase>) -> Result<Self, ConfigError> {
        config.validate()?;
        let p = &config.providers;
        let embeddings = Arc::new(EmbeddingGateway::from_config(p)?);
        let (reranker, generator): (Arc<dyn Reranker>, Arc<dyn Generator>) = if p.mock {
            (
                Arc::new(OverlapReranker),
                Arc::new(
                    MockGenerator::new()
                        .with_latency(Duration::from_millis(p.mock_latency_ms))
                        .failing(p.mock_fail_stage),
                ),
            )
        } else {
            (
                Arc::new(HttpReranker::from_env(&p.reranker_model, p.timeout())?),
                Arc::new(HttpGenerator::from_env(&p.generator_model, p.timeout())?),
            )
        };
        Ok(Pipeline::new(config, kb, embeddings, reranker, generator))
    }

    pub fn with_config(&self, config: PipelineConfig) -> Self {
        let mut p = self.clone();
        p.config = Arc::new(config);
        p
    }

    pub fn with_knowledge_base(&self, kb: Arc<KnowledgeBase>) -> Self {
        let mut p = self.clone();
        p.retriever.kb = kb;
        p
    }

    pub fn with_generator(&self, generator: Arc<dyn Generator>) -> Self {
        let mut p = self.clone();
        p.generator = generator;
        p
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn knowledge_base(&self) -> &Arc<KnowledgeBase> {
        &self.retriever.kb
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingGateway> {
        &self.retriever.embeddings
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn generator_tag(&self) -> &str {
        self.generator.tag()
    }

    /// Retrieval and prompt assembly for one stage, without generation.
    pub fn prepare(
        &self,
        kind: PromptKind,
        subjective: &str,
        objective: &str,
        assessment: Option<&str>,
        patient: &PatientContext,
    ) -> Result<(ReferenceBundle, PromptBundle), StageError> {
        let query = RetrievalQuery::new(subjective, objective, assessment.map(str::to_string));
        let bundle = match kind {
            PromptKind::Assessment | PromptKind::Plan => {
                self.retriever.retrieve_references(&query, patient, kind.stage(), &self.config)?
            }
            PromptKind::DirectPlan => self.retriever.retrieve(&query, patient, Stage::Plan, &self.config)?,
        };
        let prompt = assemble_prompt(kind, subjective, objective, assessment, &bundle, &self.config)?;
        Ok((bundle, prompt))
    }

    fn run_stage(
        &self,
        kind: PromptKind,
        subjective: &str,
        objective: &str,
        assessment: Option<&str>,
        patient: &PatientContext,
    ) -> Result<StageOutput, StageError> {
        let (bundle, prompt) = self.prepare(kind, subjective, objective, assessment, patient)?;
        let result = generate(&prompt, &bundle, self.generator.as_ref(), &self.config, &self.retry)?;
        Ok(StageOutput { kind, bundle, prompt, result })
    }

    /// Stage 1 alone: S + O → A.
    pub fn run_assessment(&self, subjective: &str, objective: &str, patient: &PatientContext) -> Result<StageOutput, PipelineError> {
        let (s, o) = validate_inputs(subjective, objective).map_err(PipelineError::InvalidInput)?;
        self.run_stage(PromptKind::Assessment, &s, &o, None, patient)
            .map_err(|source| PipelineError::Stage { stage: Stage::Assessment, source, partial: None })
    }

    /// S + O → A, then S + O + A → P with a fresh plan-index retrieval keyed
    /// on the generated assessment.
    pub fn run_two_stage(&self, subjective: &str, objective: &str, patient: &PatientContext) -> Result<TwoStageOutput, PipelineError> {
        let (s, o) = validate_inputs(subjective, objective).map_err(PipelineError::InvalidInput)?;
        let assessment = self
            .run_stage(PromptKind::Assessment, &s, &o, None, patient)
            .map_err(|source| PipelineError::Stage { stage: Stage::Assessment, source, partial: None })?;
        match self.run_stage(PromptKind::Plan, &s, &o, Some(&assessment.result.text), patient) {
            Ok(plan) => Ok(TwoStageOutput { assessment, plan }),
            Err(source) => Err(PipelineError::Stage { stage: Stage::Plan, source, partial: Some(Box::new(assessment)) }),
        }
    }

    /// Single-pass baseline: S + O → P over the plan index.
    pub fn run_single_pass(&self, subjective: &str, objective: &str, patient: &PatientContext) -> Result<StageOutput, PipelineError> {
        let (s, o) = validate_inputs(subjective, objective).map_err(PipelineError::InvalidInput)?;
        self.run_stage(PromptKind::DirectPlan, &s, &o, None, patient)
            .map_err(|source| PipelineError::Stage { stage: Stage::Plan, source, partial: None })
    }

    /// Stage 2 with a physician-supplied assessment in place of the generated one.
    pub fn regenerate_plan(
        &self,
        subjective: &str,
        objective: &str,
        assessment: &str,
        patient: &PatientContext,
    ) -> Result<StageOutput, PipelineError> {
        let (s, o) = validate_inputs(subjective, objective).map_err(PipelineError::InvalidInput)?;
        let a = validate_assessment(assessment).map_err(PipelineError::InvalidInput)?;
        self.run_stage(PromptKind::Plan, &s, &o, Some(&a), patient)
            .map_err(|source| PipelineError::Stage { stage: Stage::Plan, source, partial: None })
    }
}
