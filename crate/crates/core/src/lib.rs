//! Core of the MedPlan clinical planning pipeline.
//!
//! The pipeline mirrors the SOAP documentation order: an assessment is
//! generated from the subjective and objective sections first, then a plan
//! is generated from the same inputs plus that assessment. Both stages are
//! grounded in the patient's own recent visits and in similar visits from
//! other patients, found by hybrid BM25 + dense retrieval followed by a
//! cross-encoder re-rank.
//!
//! Module map:
//!
//! * [`soap`], [`text`]: domain types, normalization and validation.
//! * [`corpus`]: JSONL ingestion, patient-centric splitting, tuning-pair export.
//! * [`embedding`]: embedding providers and the batching gateway.
//! * [`retrieval`]: inverted index, dense store, fusion, re-ranking, reference bundles.
//! * [`generation`]: prompt assembly, generator providers, the two-stage pipeline.
//! * [`eval`]: text metrics, the visit-split protocol and ablation reports.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod generation;
pub mod par;
pub mod provider;
pub mod retrieval;
pub mod soap;
pub mod synth;
pub mod text;

pub use config::{PipelineConfig, ProviderConfig, SplitConfig};
pub use par::Execution;
pub use soap::{PatientRecord, RejectReason, SoapNote, Stage, Verdict};
