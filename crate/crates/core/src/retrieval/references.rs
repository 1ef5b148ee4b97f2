use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fusion::hybrid_candidates;
use super::index::{build_index, IndexedDocument, RetrievalIndex};
use super::rerank::{rerank, Reranker};
use super::{compose_query, key_text, IndexError, RetrievalError};
use crate::config::PipelineConfig;
use crate::embedding::{EmbedKind, EmbeddingGateway};
use crate::provider::RetryPolicy;
use crate::soap::{validate_note, NoteRole, SoapNote, Stage};

/// The cross-patient knowledge base: one index per stage.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    assessment: RetrievalIndex,
    plan: RetrievalIndex,
}

impl KnowledgeBase {
    pub fn empty() -> Self {
        KnowledgeBase { assessment: RetrievalIndex::empty(Stage::Assessment), plan: RetrievalIndex::empty(Stage::Plan) }
    }

    /// Indexes every note with a usable assessment into the assessment
    /// index, and every note that also has a usable plan into the plan index.
    pub fn build(notes: &[SoapNote], gateway: &EmbeddingGateway) -> Result<Self, IndexError> {
        let pick = |stage: Stage| -> Vec<SoapNote> {
            notes
                .iter()
                .filter(|n| validate_note(n, NoteRole::for_index(stage)).is_accept())
                .cloned()
                .collect()
        };
        Ok(KnowledgeBase {
            assessment: build_index(&pick(Stage::Assessment), Stage::Assessment, gateway)?,
            plan: build_index(&pick(Stage::Plan), Stage::Plan, gateway)?,
        })
    }

    pub fn from_indexes(assessment: RetrievalIndex, plan: RetrievalIndex) -> Result<Self, IndexError> {
        if assessment.stage() != Stage::Assessment || plan.stage() != Stage::Plan {
            return Err(IndexError::Format("indexes passed for the wrong stages".into()));
        }
        Ok(KnowledgeBase { assessment, plan })
    }

    pub fn index(&self, stage: Stage) -> &RetrievalIndex {
        match stage {
            Stage::Assessment => &self.assessment,
            Stage::Plan => &self.plan,
        }
    }

    /// A new knowledge base with `note` added to every index it qualifies for.
    pub fn with_note(&self, note: &SoapNote, gateway: &EmbeddingGateway) -> Result<Self, IndexError> {
        let extend = |idx: &RetrievalIndex| -> Result<RetrievalIndex, IndexError> {
            let stage = idx.stage();
            if !validate_note(note, NoteRole::for_index(stage)).is_accept() {
                return Ok(idx.clone());
            }
            let key = key_text(note, stage);
            let embedding = gateway
                .embed_text(&key, EmbedKind::Document)
                .map_err(|source| IndexError::Embedding { embedded: 0, total: 1, source })?;
            let mut docs = idx.documents().to_vec();
            docs.push(IndexedDocument { doc_id: note.doc_id(stage), key_text: key, payload: note.clone(), embedding });
            RetrievalIndex::from_documents(stage, docs, idx.params())
        };
        Ok(KnowledgeBase { assessment: extend(&self.assessment)?, plan: extend(&self.plan)? })
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        self.assessment.save(&dir.join(Stage::Assessment.key_kind()))?;
        self.plan.save(&dir.join(Stage::Plan.key_kind()))
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        KnowledgeBase::from_indexes(
            RetrievalIndex::load(&dir.join(Stage::Assessment.key_kind()))?,
            RetrievalIndex::load(&dir.join(Stage::Plan.key_kind()))?,
        )
    }
}

/// The current visit's retrieval inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub subjective: String,
    pub objective: String,
    pub assessment: Option<String>,
}

impl RetrievalQuery {
    pub fn new(subjective: impl Into<String>, objective: impl Into<String>, assessment: Option<String>) -> Self {
        RetrievalQuery { subjective: subjective.into(), objective: objective.into(), assessment }
    }

    pub fn text(&self) -> String {
        compose_query(&self.subjective, &self.objective, self.assessment.as_deref())
    }
}

/// The patient being treated and the visits that precede the current one,
/// oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatientContext {
    pub mrn: String,
    pub history: Vec<SoapNote>,
}

impl PatientContext {
    pub fn new(mrn: impl Into<String>, history: Vec<SoapNote>) -> Self {
        PatientContext { mrn: mrn.into(), history }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPatientReference {
    pub doc_id: String,
    pub note: SoapNote,
    pub rerank_score: f64,
}

/// Everything retrieved for one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBundle {
    pub stage: Stage,
    /// Text the re-ranker scored candidates against.
    pub query_text: String,
    /// Most recent visit first.
    pub self_history: Vec<SoapNote>,
    /// Highest re-rank score first.
    pub cross_patient: Vec<CrossPatientReference>,
    pub fallback_used: bool,
}

impl ReferenceBundle {
    pub fn empty(stage: Stage, query_text: impl Into<String>) -> Self {
        ReferenceBundle {
            stage,
            query_text: query_text.into(),
            self_history: Vec::new(),
            cross_patient: Vec::new(),
            fallback_used: false,
        }
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.cross_patient.iter().map(|r| r.doc_id.clone()).collect()
    }
}

/// Resolves reference bundles against a knowledge base.
#[derive(Clone)]
pub struct Retriever {
    pub kb: Arc<KnowledgeBase>,
    pub embeddings: Arc<EmbeddingGateway>,
    pub reranker: Arc<dyn Reranker>,
    pub retry: RetryPolicy,
}

impl Retriever {
    /// Bundle for one stage of the two-stage flow. The assessment stage must
    /// be queried without an assessment, the plan stage with one.
    pub fn retrieve_references(
        &self,
        query: &RetrievalQuery,
        patient: &PatientContext,
        stage: Stage,
        config: &PipelineConfig,
    ) -> Result<ReferenceBundle, RetrievalError> {
        match (stage, &query.assessment) {
            (Stage::Assessment, Some(_)) => return Err(RetrievalError::InvalidQuery("assessment-stage query must not carry an assessment")),
            (Stage::Plan, None) => return Err(RetrievalError::InvalidQuery("plan-stage query requires an assessment")),
            _ => {}
        }
        self.retrieve(query, patient, stage, config)
    }

    /// Retrieval without the stage/assessment pairing check; the single-pass
    /// baseline queries the plan index with S and O alone.
    pub fn retrieve(
        &self,
        query: &RetrievalQuery,
        patient: &PatientContext,
        stage: Stage,
        config: &PipelineConfig,
    ) -> Result<ReferenceBundle, RetrievalError> {
        let query_text = query.text();
        let mut bundle = ReferenceBundle::empty(stage, query_text.clone());
        if config.use_self_history {
            bundle.self_history = patient
                .history
                .iter()
                .filter(|n| n.mrn == patient.mrn)
                .rev()
                .take(config.n_hist)
                .cloned()
                .collect();
        }
        let index = self.kb.index(stage);
        if !config.use_cross_patient || index.is_empty() {
            return Ok(bundle);
        }
        let query_vec = self.embeddings.embed_text(&query_text, EmbedKind::Query)?;
        let mrn = patient.mrn.as_str();
        let candidates = hybrid_candidates(index, &query_text, &query_vec, config.n_sim, config.fusion_alpha, |n| n.mrn != mrn)?;
        let outcome = rerank(&query_text, candidates, index, self.reranker.as_ref(), config.n_ref, &self.retry, config.rerank_fallback)?;
        bundle.fallback_used = outcome.fallback_used;
        bundle.cross_patient = outcome
            .candidates
            .into_iter()
            .map(|c| {
                let doc = index.get(&c.doc_id).expect("candidate comes from this index");
                CrossPatientReference {
                    rerank_score: c.rerank_score.or(c.fused_score).unwrap_or(0.0),
                    doc_id: c.doc_id,
                    note: doc.payload.clone(),
                }
            })
            .collect();
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::OverlapReranker;
    use chrono::NaiveDate;

    fn note(mrn: &str, seq: u32, s: &str, a: &str) -> SoapNote {
        let mut n = SoapNote::new(mrn, NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(seq as u64), s, "vitals stable", a, "plan text");
        n.visit_seq = seq;
        n
    }

    fn retriever(notes: &[SoapNote]) -> Retriever {
        let g = Arc::new(EmbeddingGateway::mock(2, 64));
        Retriever {
            kb: Arc::new(KnowledgeBase::build(notes, &g).unwrap()),
            embeddings: g,
            reranker: Arc::new(OverlapReranker),
            retry: RetryPolicy::none(),
        }
    }

    #[test]
    fn self_history_is_latest_first_and_capped() {
        let r = retriever(&[]);
        let history: Vec<_> = (1..=25).map(|i| note("me", i, "cough", "URI")).collect();
        let ctx = PatientContext::new("me", history);
        let q = RetrievalQuery::new("cough", "afebrile", None);
        let b = r.retrieve_references(&q, &ctx, Stage::Assessment, &PipelineConfig::default()).unwrap();
        let seqs: Vec<u32> = b.self_history.iter().map(|n| n.visit_seq).collect();
        assert_eq!(seqs, (6..=25).rev().collect::<Vec<_>>());
        assert!(b.cross_patient.is_empty());

        let short = PatientContext::new("me", (1..=3).map(|i| note("me", i, "cough", "URI")).collect());
        let b = r.retrieve_references(&q, &short, Stage::Assessment, &PipelineConfig::default()).unwrap();
        assert_eq!(b.self_history.len(), 3);
    }

    #[test]
    fn same_patient_never_appears_cross_patient() {
        let mut kb: Vec<_> = (1..=5).map(|i| note("me", i, "chest pain exertional", "angina")).collect();
        kb.extend((1..=3).map(|i| note(&format!("other{i}"), 1, "chest pain", "angina")));
        let r = retriever(&kb);
        let q = RetrievalQuery::new("chest pain exertional", "vitals stable", None);
        let b = r.retrieve(&q, &PatientContext::new("me", vec![]), Stage::Assessment, &PipelineConfig::default()).unwrap();
        assert_eq!(b.cross_patient.len(), 3);
        assert!(b.cross_patient.iter().all(|c| c.note.mrn != "me"));
        assert!(b.cross_patient.windows(2).all(|w| w[0].rerank_score >= w[1].rerank_score));
    }

    #[test]
    fn stage_and_assessment_must_agree() {
        let r = retriever(&[]);
        let ctx = PatientContext::new("me", vec![]);
        let with_a = RetrievalQuery::new("s1", "o1", Some("A".into()));
        let without = RetrievalQuery::new("s1", "o1", None);
        let cfg = PipelineConfig::default();
        assert!(matches!(r.retrieve_references(&with_a, &ctx, Stage::Assessment, &cfg), Err(RetrievalError::InvalidQuery(_))));
        assert!(matches!(r.retrieve_references(&without, &ctx, Stage::Plan, &cfg), Err(RetrievalError::InvalidQuery(_))));
        assert_eq!(with_a.text(), "S: s1 O: o1 A: A");
    }

    #[test]
    fn notes_without_plan_stay_out_of_plan_index() {
        let mut n = note("x", 1, "cough", "URI");
        n.plan = String::new();
        let g = EmbeddingGateway::mock(1, 16);
        let kb = KnowledgeBase::build(&[n.clone()], &g).unwrap();
        assert_eq!((kb.index(Stage::Assessment).len(), kb.index(Stage::Plan).len()), (1, 0));
        let mut m = note("y", 1, "fever", "flu");
        m.visit_seq = 2;
        let kb2 = kb.with_note(&m, &g).unwrap();
        assert_eq!((kb2.index(Stage::Assessment).len(), kb2.index(Stage::Plan).len()), (2, 1));
    }

    #[test]
    fn ablation_flags_skip_sources() {
        let kb = vec![note("o", 1, "cough", "URI")];
        let r = retriever(&kb);
        let ctx = PatientContext::new("me", vec![note("me", 1, "cough", "URI")]);
        let q = RetrievalQuery::new("cough", "ok", None);
        let cfg = PipelineConfig { use_cross_patient: false, use_self_history: false, ..Default::default() };
        let b = r.retrieve(&q, &ctx, Stage::Assessment, &cfg).unwrap();
        assert!(b.cross_patient.is_empty() && b.self_history.is_empty());
    }
}
