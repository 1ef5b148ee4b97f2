//! Prompt assembly, generator providers and the two-stage pipeline.

mod generator;
mod pipeline;
mod prompt;

use thiserror::Error;

pub use generator::{generate, GenerationRequest, GenerationResult, Generator, HttpGenerator, MockGenerator, NO_REFERENCE_SENTINEL};
pub use pipeline::{Pipeline, PipelineError, StageError, StageOutput, TwoStageOutput};
pub use prompt::{assemble_prompt, PromptBundle, PromptKind};

use crate::provider::ProviderError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("plan prompts need an assessment")]
    MissingAssessment,
    #[error("reference bundle is for the {bundle} stage, prompt is for {prompt}")]
    StageMismatch { bundle: crate::soap::Stage, prompt: crate::soap::Stage },
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerationError::Provider(e) if e.is_retryable())
    }
}
