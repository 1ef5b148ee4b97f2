//! Two-step cross-patient retrieval.
//!
//! Candidates come from a hybrid of BM25 over an inverted index and exact
//! cosine search over a dense store, fused by min-max normalization and a
//! convex combination. A cross-encoder then re-scores the candidate pool
//! against the query and the best `n_ref` survive. The same machinery is
//! instantiated twice: keys of the form `S: .. O: ..` for the assessment
//! stage and `S: .. O: .. A: ..` for the plan stage.

mod fusion;
mod index;
mod persist;
mod references;
mod rerank;

use thiserror::Error;

pub use fusion::{fuse, hybrid_candidates, RetrievalCandidate};
pub use index::{build_index, query_terms, Bm25Params, IndexedDocument, Posting, RetrievalIndex, Scored};
pub use references::{
    CrossPatientReference, KnowledgeBase, PatientContext, ReferenceBundle, RetrievalQuery, Retriever,
};
pub use rerank::{rerank, HttpReranker, OverlapReranker, RerankOutcome, Reranker};

use crate::embedding::EmbeddingError;
use crate::provider::ProviderError;
use crate::soap::{SoapNote, Stage};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("document `{0}` has an empty retrieval key")]
    EmptyKey(String),
    #[error("unknown document `{0}`")]
    UnknownDoc(String),
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding failed after {embedded} of {total} documents: {source}")]
    Embedding { embedded: usize, total: usize, source: EmbeddingError },
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
    #[error("index format: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("query embedding failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("re-ranker failed: {0}")]
    Rerank(ProviderError),
    #[error("invalid retrieval query: {0}")]
    InvalidQuery(&'static str),
}

impl RetrievalError {
    pub fn is_retryable(&self) -> bool {
        match self {
            RetrievalError::Embedding(e) => e.is_retryable(),
            RetrievalError::Rerank(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// Retrieval key of a note in the given stage's index.
pub fn key_text(note: &SoapNote, stage: Stage) -> String {
    let a = (stage == Stage::Plan).then_some(note.assessment.as_str());
    compose_query(&note.subjective, &note.objective, a)
}

/// `S: <s> O: <o>` with ` A: <a>` appended when an assessment is given.
pub fn compose_query(subjective: &str, objective: &str, assessment: Option<&str>) -> String {
    let mut q = format!("S: {subjective} O: {objective}");
    if let Some(a) = assessment {
        q.push_str(" A: ");
        q.push_str(a);
    }
    q
}
