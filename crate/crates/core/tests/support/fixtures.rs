//! Seeded corpora and queries for retrieval tests.

#![allow(dead_code)]

use medplan_core::embedding::EmbeddingGateway;
use medplan_core::retrieval::{build_index, RetrievalIndex};
use medplan_core::soap::{PatientRecord, SoapNote, Stage};
use medplan_core::synth::{synthesize, SynthConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: &[&str] = &[
    "chest", "pain", "cough", "fever", "bp", "hr", "stable", "wheeze", "glucose", "hba1c", "tsh", "headache",
    "nausea", "edema", "ecg", "sinus", "rhythm", "diabetes", "hypertension", "asthma", "migraine", "abdomen",
    "tenderness", "fatigue", "weight", "dizziness", "numbness", "tremor", "palpitations", "unknownword",
];

pub fn gateway() -> EmbeddingGateway {
    EmbeddingGateway::mock(0x5eed, 64)
}

/// Synthetic notes, at least `min_notes` of them, from records sized by `seed`.
pub fn notes(seed: u64, min_notes: usize) -> Vec<SoapNote> {
    let mut patients = min_notes / 4 + 1;
    loop {
        let records = synthesize(&SynthConfig { patients, seed, ..Default::default() });
        let notes: Vec<SoapNote> = records.into_iter().flat_map(|r: PatientRecord| r.visits).collect();
        if notes.len() >= min_notes {
            return notes;
        }
        patients += 10;
    }
}

pub fn index(seed: u64, min_notes: usize, stage: Stage) -> RetrievalIndex {
    build_index(&notes(seed, min_notes), stage, &gateway()).expect("index builds")
}

/// `count` random queries of 1..8 words, mixing the corpus vocabulary with
/// words absent from it.
pub fn queries(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..8);
            (0..n).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

use std::sync::Arc;

use medplan_core::corpus::{split_corpus, CorpusSplit};
use medplan_core::generation::Pipeline;
use medplan_core::retrieval::KnowledgeBase;
use medplan_core::{PipelineConfig, SplitConfig};

pub struct EvalSetup {
    pub records: Vec<PatientRecord>,
    pub split: CorpusSplit,
    pub pipeline: Pipeline,
}

/// Synthetic corpus split into knowledge base and evaluation patients, with
/// a mock pipeline over the knowledge base.
pub fn eval_setup(seed: u64, patients: usize, kb_count: usize, eval_count: usize) -> EvalSetup {
    let records = synthesize(&SynthConfig { patients, seed, ..Default::default() });
    let split = split_corpus(&records, &SplitConfig { kb_count, eval_count, ..Default::default() }, seed).expect("split");
    let config = PipelineConfig::default();
    let g = EmbeddingGateway::from_config(&config.providers).expect("mock gateway");
    let kb = KnowledgeBase::build(&split.kb_notes(&records), &g).expect("kb");
    let pipeline = Pipeline::from_config(config, Arc::new(kb)).expect("pipeline");
    EvalSetup { records, split, pipeline }
}
