mod support;

use std::sync::Arc;

use chrono::NaiveDate;
use medplan_core::embedding::EmbeddingGateway;
use medplan_core::generation::{Pipeline, PipelineError, PromptKind, NO_REFERENCE_SENTINEL};
use medplan_core::retrieval::{compose_query, KnowledgeBase, PatientContext};
use medplan_core::{PipelineConfig, RejectReason, SoapNote, Stage};
use support::fixtures;

const HISTORY_HEADING: &str = "### Patient History";
const REFERENCES_HEADING: &str = "### Similar Cases From Other Patients";

fn note(mrn: &str, day: u32, s: &str, o: &str, a: &str, p: &str) -> SoapNote {
    SoapNote::new(mrn, NaiveDate::from_ymd_opt(2023, 1, day).unwrap(), s, o, a, p)
}

fn small_kb() -> Vec<SoapNote> {
    vec![
        note("K1", 1, "chest tightness on exertion", "BP 150/95", "stable angina", "nitroglycerin as needed"),
        note("K2", 2, "chest tightness on exertion", "BP 150/95", "unstable angina crescendo pattern", "admit for observation"),
        note("K3", 3, "productive cough", "crackles right base", "community acquired pneumonia", "amoxicillin"),
        note("K4", 4, "wheezing at night", "scattered wheeze", "asthma exacerbation", "inhaled steroid"),
        note("K5", 5, "polyuria and thirst", "HbA1c 9.1", "type 2 diabetes poorly controlled", "add metformin"),
    ]
}

fn pipeline_over(notes: &[SoapNote], config: PipelineConfig) -> Pipeline {
    let g = EmbeddingGateway::from_config(&config.providers).unwrap();
    let kb = KnowledgeBase::build(notes, &g).unwrap();
    Pipeline::from_config(config, Arc::new(kb)).unwrap()
}

#[test]
fn two_stage_couples_plan_to_generated_assessment() {
    let setup = fixtures::eval_setup(11, 120, 60, 50);
    let cases: Vec<_> = setup
        .split
        .train_records(&setup.records)
        .into_iter()
        .chain(setup.split.test_records(&setup.records))
        .map(|r| (r.mrn.clone(), r.visits[..r.len() - 1].to_vec(), r.visits.last().unwrap().clone()))
        .collect();
    assert_eq!(cases.len(), 50);
    for (mrn, history, target) in &cases {
        let out = setup.pipeline.run_two_stage(&target.subjective, &target.objective, &PatientContext::new(mrn, history.clone())).unwrap();
        let a = &out.assessment.result.text;
        assert!(out.plan.prompt.user_prompt.contains(a.as_str()));
        assert_eq!(out.plan.prompt.user_prompt.matches(&format!("Assessment: {a}")).count(), 1);
        assert_eq!(out.plan.bundle.query_text, format!("{} A: {a}", out.assessment.bundle.query_text));
        assert_eq!(out.assessment.bundle.query_text, compose_query(&target.subjective, &target.objective, None));
        assert!(out.plan.bundle.cross_patient.iter().all(|r| &r.note.mrn != mrn));
    }
}

#[test]
fn mock_pipeline_is_deterministic() {
    let setup = fixtures::eval_setup(5, 40, 20, 10);
    let r = &setup.split.test_records(&setup.records)[0];
    let patient = PatientContext::new(r.mrn.clone(), r.visits[..r.len() - 1].to_vec());
    let t = r.visits.last().unwrap();
    let a = setup.pipeline.run_two_stage(&t.subjective, &t.objective, &patient).unwrap();
    let b = setup.pipeline.run_two_stage(&t.subjective, &t.objective, &patient).unwrap();
    assert_eq!(a.assessment.result.text, b.assessment.result.text);
    assert_eq!(a.plan.result.text, b.plan.result.text);
    assert_eq!(a.plan.prompt, b.plan.prompt);
    assert_eq!(a.plan.bundle, b.plan.bundle);
}

#[test]
fn empty_kb_and_history_yield_sentinels() {
    let p = pipeline_over(&[], PipelineConfig::default());
    let out = p.run_two_stage("headache", "normal exam", &PatientContext::new("new", vec![])).unwrap();
    assert_eq!(out.assessment.result.text, NO_REFERENCE_SENTINEL);
    assert_eq!(out.plan.result.text, NO_REFERENCE_SENTINEL);
    assert!(out.plan.prompt.user_prompt.contains("Assessment: NO-REFERENCE-BASELINE"));
}

#[test]
fn single_pass_uses_plan_index_without_assessment() {
    let p = pipeline_over(&small_kb(), PipelineConfig::default());
    let out = p.run_single_pass("chest tightness on exertion", "BP 150/95", &PatientContext::new("Q", vec![])).unwrap();
    assert_eq!(out.kind, PromptKind::DirectPlan);
    assert_eq!(out.bundle.stage, Stage::Plan);
    assert_eq!(out.bundle.query_text, "S: chest tightness on exertion O: BP 150/95");
    assert_eq!(out.result.text, "nitroglycerin as needed");
    assert!(!out.prompt.user_prompt.contains("Assessment:"));
}

#[test]
fn edited_assessment_redirects_plan_retrieval() {
    let p = pipeline_over(&small_kb(), PipelineConfig::default());
    let patient = PatientContext::new("Q", vec![]);
    let two = p.run_two_stage("chest tightness on exertion", "BP 150/95", &patient).unwrap();
    assert_eq!(two.assessment.result.text, "stable angina");
    assert_eq!(two.plan.bundle.cross_patient[0].note.mrn, "K1");
    let same = p.regenerate_plan("chest tightness on exertion", "BP 150/95", &two.assessment.result.text, &patient).unwrap();
    assert_eq!(same.result.prompt_fingerprint, two.plan.result.prompt_fingerprint);

    let edited = p.regenerate_plan("chest tightness on exertion", "BP 150/95", "unstable angina crescendo", &patient).unwrap();
    assert_eq!(edited.bundle.cross_patient[0].note.mrn, "K2");
    assert_eq!(edited.result.text, "admit for observation");
    assert!(matches!(
        p.regenerate_plan("chest tightness", "BP 150/95", "  ", &patient),
        Err(PipelineError::InvalidInput(RejectReason::AssessmentTooShort))
    ));
}

#[test]
fn disabled_sources_leave_no_trace_in_prompt() {
    let history = vec![note("Q", 1, "old cough", "clear", "resolved bronchitis", "none")];
    let patient = PatientContext::new("Q", history);
    let full = pipeline_over(&small_kb(), PipelineConfig::default());
    let out = full.run_single_pass("cough", "crackles", &patient).unwrap();
    assert!(out.prompt.user_prompt.contains(HISTORY_HEADING));
    assert!(out.prompt.user_prompt.contains(REFERENCES_HEADING));

    let no_x = full.with_config(PipelineConfig { use_cross_patient: false, ..Default::default() });
    let out = no_x.run_single_pass("cough", "crackles", &patient).unwrap();
    assert!(!out.prompt.user_prompt.contains(REFERENCES_HEADING));
    assert!(out.bundle.cross_patient.is_empty());

    let no_h = full.with_config(PipelineConfig { use_self_history: false, ..Default::default() });
    let out = no_h.run_single_pass("cough", "crackles", &patient).unwrap();
    assert!(!out.prompt.user_prompt.contains(HISTORY_HEADING));
    assert!(!out.prompt.user_prompt.contains("old cough"));
}

#[test]
fn same_patient_notes_never_cross_reference() {
    let mut kb = small_kb();
    for d in 10..15 {
        let mut n = note("Q", d, "chest tightness on exertion", "BP 150/95", "stable angina again", "same plan");
        n.visit_seq = d;
        kb.push(n);
    }
    let p = pipeline_over(&kb, PipelineConfig::default());
    let out = p.run_two_stage("chest tightness on exertion", "BP 150/95", &PatientContext::new("Q", vec![])).unwrap();
    for stage in [&out.assessment, &out.plan] {
        assert!(!stage.bundle.cross_patient.is_empty());
        assert!(stage.bundle.cross_patient.iter().all(|r| r.note.mrn != "Q"));
    }
}

#[test]
fn history_is_capped_and_most_recent_first() {
    let history: Vec<SoapNote> = (1..=25)
        .map(|d| {
            let mut n = note("Q", d, &format!("visit {d}"), "ok", "aa", "pp");
            n.visit_seq = d;
            n
        })
        .collect();
    let p = pipeline_over(&[], PipelineConfig::default());
    let out = p.run_assessment("today", "exam", &PatientContext::new("Q", history)).unwrap();
    let seqs: Vec<u32> = out.bundle.self_history.iter().map(|n| n.visit_seq).collect();
    assert_eq!(seqs, (6..=25).rev().collect::<Vec<_>>());
}

#[test]
fn stage_two_failure_keeps_stage_one() {
    let mut config = PipelineConfig::default();
    config.providers.mock_fail_stage = Some(Stage::Plan);
    let p = pipeline_over(&small_kb(), config);
    match p.run_two_stage("cough", "crackles", &PatientContext::new("Q", vec![])) {
        Err(PipelineError::Stage { stage: Stage::Plan, partial: Some(a), .. }) => {
            assert_eq!(a.result.stage, Stage::Assessment);
            assert!(!a.result.text.is_empty());
        }
        other => panic!("expected stage-2 failure, got {other:?}"),
    }
}

#[test]
fn invalid_inputs_are_rejected_before_any_call() {
    let p = pipeline_over(&small_kb(), PipelineConfig::default());
    let patient = PatientContext::default();
    assert!(matches!(p.run_two_stage("", "ok", &patient), Err(PipelineError::InvalidInput(RejectReason::SubjectiveTooShort))));
    assert!(matches!(p.run_single_pass("ok", "x", &patient), Err(PipelineError::InvalidInput(RejectReason::ObjectiveTooShort))));
}
