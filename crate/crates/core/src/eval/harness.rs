use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{score_all, MetricScores};
use crate::config::PipelineConfig;
use crate::corpus::{CorpusSplit, SkippedPatient};
use crate::embedding::EmbeddingGateway;
use crate::generation::{Pipeline, PipelineError, StageOutput};
use crate::par::Execution;
use crate::retrieval::{PatientContext, ReferenceBundle};
use crate::soap::{validate_note, NoteRole, PatientRecord, SoapNote, Stage};

/// One held-out visit and everything before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub mrn: String,
    /// Visits 1..N-1, oldest first.
    pub history: Vec<SoapNote>,
    /// Visit N.
    pub target: SoapNote,
}

impl EvalCase {
    pub fn patient(&self) -> PatientContext {
        PatientContext::new(self.mrn.clone(), self.history.clone())
    }
}

/// One case per test patient, sorted by mrn. Targets without a usable
/// assessment and plan are excluded and reported.
pub fn build_eval_cases(split: &CorpusSplit, records: &[PatientRecord]) -> (Vec<EvalCase>, Vec<SkippedPatient>) {
    let mut cases = Vec::new();
    let mut excluded = Vec::new();
    let mut test = split.test_records(records);
    test.sort_by(|a, b| a.mrn.cmp(&b.mrn));
    for r in test {
        let Some((target, history)) = r.visits.split_last() else {
            excluded.push(SkippedPatient { mrn: r.mrn.clone(), reason: "no_visits".into() });
            continue;
        };
        if let Err(reason) = validate_note(target, NoteRole::Complete).into_result() {
            excluded.push(SkippedPatient { mrn: r.mrn.clone(), reason: reason.code().into() });
            continue;
        }
        cases.push(EvalCase { mrn: r.mrn.clone(), history: history.to_vec(), target: target.clone() });
    }
    (cases, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMethod {
    SinglePass,
    TwoStage,
}

impl PlanningMethod {
    pub fn label(self) -> &'static str {
        match self {
            PlanningMethod::SinglePass => "S+O→P",
            PlanningMethod::TwoStage => "S+O→A→P",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlanningMethod::SinglePass => "single_pass",
            PlanningMethod::TwoStage => "two_stage",
        }
    }
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub planning_method: PlanningMethod,
    pub use_self_history: bool,
    pub use_cross_patient: bool,
    pub provider_tag: String,
    /// Informational: whether the generator behind `provider_tag` was tuned.
    #[serde(default)]
    pub instruction_tuned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl AblationConfig {
    /// File-name friendly identifier, e.g. `two_stage-hist-xpat`.
    pub fn slug(&self) -> String {
        format!(
            "{}-{}-{}",
            self.planning_method.as_str(),
            if self.use_self_history { "hist" } else { "nohist" },
            if self.use_cross_patient { "xpat" } else { "noxpat" }
        )
    }

    /// The full {single_pass, two_stage} × ±self-history × ±cross-patient grid.
    pub fn matrix(provider_tag: &str, instruction_tuned: bool) -> Vec<AblationConfig> {
        let mut out = Vec::with_capacity(8);
        for planning_method in [PlanningMethod::SinglePass, PlanningMethod::TwoStage] {
            for (use_self_history, use_cross_patient) in [(false, false), (true, false), (false, true), (true, true)] {
                out.push(AblationConfig {
                    planning_method,
                    use_self_history,
                    use_cross_patient,
                    provider_tag: provider_tag.to_string(),
                    instruction_tuned,
                    notes: None,
                });
            }
        }
        out
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig { use_self_history: self.use_self_history, use_cross_patient: self.use_cross_patient, ..base.clone() }
    }

    /// Hex SHA-256 over this row and the effective pipeline configuration.
    pub fn fingerprint(&self, base: &PipelineConfig) -> String {
        let json = serde_json::to_string(&(self, self.apply(base))).expect("configs serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Generated text next to its ground truth, for external re-scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub mrn: String,
    pub stage: Stage,
    pub generated: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub mrn: String,
    pub scores: MetricScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub mrn: String,
    pub stage: Option<Stage>,
    pub error: String,
}

/// Per-case scores and their macro mean for one stage of one config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_fingerprint: String,
    pub case_count: usize,
    pub failures: usize,
    /// `None` when no case was scored.
    pub mean: Option<MetricScores>,
    pub per_case: Vec<CaseScore>,
}

impl MetricReport {
    fn new(config_fingerprint: String, per_case: Vec<CaseScore>, failures: usize) -> Self {
        let scores: Vec<MetricScores> = per_case.iter().map(|c| c.scores).collect();
        MetricReport { config_fingerprint, case_count: per_case.len(), failures, mean: MetricScores::mean(&scores), per_case }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub plan: MetricReport,
    /// Present for two-stage configs.
    pub assessment: Option<MetricReport>,
    pub failures: Vec<CaseFailure>,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

/// Checks every bundle used during evaluation for leaked content.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub bundles_checked: usize,
    /// Target-visit documents found among cross-patient references.
    pub target_doc_hits: usize,
    /// Cross-patient references sharing the case's mrn.
    pub same_mrn_hits: usize,
    /// Self-history entries at or after the target visit.
    pub future_history_hits: usize,
    pub violations: Vec<String>,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.target_doc_hits == 0 && self.same_mrn_hits == 0 && self.future_history_hits == 0
    }

    pub fn check(&mut self, case: &EvalCase, bundle: &ReferenceBundle) {
        self.bundles_checked += 1;
        let targets = [case.target.doc_id(Stage::Assessment), case.target.doc_id(Stage::Plan)];
        for r in &bundle.cross_patient {
            if targets.contains(&r.doc_id) {
                self.target_doc_hits += 1;
                self.violations.push(format!("{}: target document {} retrieved", case.mrn, r.doc_id));
            }
            if r.note.mrn == case.mrn {
                self.same_mrn_hits += 1;
                self.violations.push(format!("{}: same-patient reference {}", case.mrn, r.doc_id));
            }
        }
        for h in &bundle.self_history {
            if h.mrn != case.mrn || h.visit_seq >= case.target.visit_seq {
                self.future_history_hits += 1;
                self.violations.push(format!("{}: history visit {}:{} not before target", case.mrn, h.mrn, h.visit_seq));
            }
        }
    }

    fn merge(&mut self, other: LeakageAudit) {
        self.bundles_checked += other.bundles_checked;
        self.target_doc_hits += other.target_doc_hits;
        self.same_mrn_hits += other.same_mrn_hits;
        self.future_history_hits += other.future_history_hits;
        self.violations.extend(other.violations);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub case_count: usize,
    pub rows: Vec<AblationRow>,
    pub audit: LeakageAudit,
}

impl AblationReport {
    /// Predictions keyed by config slug.
    pub fn predictions(&self) -> BTreeMap<String, &[Prediction]> {
        self.rows.iter().map(|r| (r.config.slug(), r.predictions.as_slice())).collect()
    }
}

#[derive(Default)]
struct CaseOutcome {
    plan: Option<MetricScores>,
    assessment: Option<MetricScores>,
    predictions: Vec<Prediction>,
    failure: Option<CaseFailure>,
    audit: LeakageAudit,
}

fn evaluate_case(case: &EvalCase, method: PlanningMethod, pipeline: &Pipeline, embedder: &EmbeddingGateway) -> CaseOutcome {
    let mut out = CaseOutcome::default();
    let patient = case.patient();
    let (s, o) = (&case.target.subjective, &case.target.objective);
    let fail = |out: &mut CaseOutcome, stage: Option<Stage>, error: String| {
        out.failure = Some(CaseFailure { mrn: case.mrn.clone(), stage, error });
    };
    let (assessment, plan): (Option<StageOutput>, StageOutput) = match method {
        PlanningMethod::TwoStage => match pipeline.run_two_stage(s, o, &patient) {
            Ok(two) => (Some(two.assessment), two.plan),
            Err(e) => {
                if let PipelineError::Stage { partial: Some(partial), .. } = &e {
                    out.audit.check(case, &partial.bundle);
                }
                fail(&mut out, e.failed_stage(), e.to_string());
                return out;
            }
        },
        PlanningMethod::SinglePass => match pipeline.run_single_pass(s, o, &patient) {
            Ok(plan) => (None, plan),
            Err(e) => {
                fail(&mut out, e.failed_stage(), e.to_string());
                return out;
            }
        },
    };
    let mut score = |stage: Stage, generated: &StageOutput, reference: &str| -> Option<MetricScores> {
        out.audit.check(case, &generated.bundle);
        out.predictions.push(Prediction {
            mrn: case.mrn.clone(),
            stage,
            generated: generated.result.text.clone(),
            reference: reference.to_string(),
        });
        match score_all(&generated.result.text, reference, embedder) {
            Ok(s) => Some(s),
            Err(e) => {
                out.failure = Some(CaseFailure { mrn: case.mrn.clone(), stage: Some(stage), error: format!("scoring: {e}") });
                None
            }
        }
    };
    let a = assessment.as_ref().map(|a| score(Stage::Assessment, a, &case.target.assessment));
    let p = score(Stage::Plan, &plan, &case.target.plan);
    if out.failure.is_none() {
        out.assessment = a.flatten();
        out.plan = p;
    }
    out
}

/// Runs every config over every case. Cases run in parallel under `exec`;
/// outputs are reduced in case order, so reports do not depend on scheduling.
pub fn run_ablation(
    cases: &[EvalCase],
    configs: &[AblationConfig],
    pipeline: &Pipeline,
    embedder: &EmbeddingGateway,
    exec: Execution,
) -> AblationReport {
    let mut audit = LeakageAudit::default();
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let p = pipeline.with_config(config.apply(pipeline.config()));
        let fingerprint = config.fingerprint(pipeline.config());
        let outcomes = exec.map(cases, |case| evaluate_case(case, config.planning_method, &p, embedder));
        let mut plan_scores = Vec::new();
        let mut assessment_scores = Vec::new();
        let mut failures = Vec::new();
        let mut predictions = Vec::new();
        for (case, o) in cases.iter().zip(outcomes) {
            audit.merge(o.audit);
            predictions.extend(o.predictions);
            if let Some(f) = o.failure {
                failures.push(f);
                continue;
            }
            if let Some(s) = o.plan {
                plan_scores.push(CaseScore { mrn: case.mrn.clone(), scores: s });
            }
            if let Some(s) = o.assessment {
                assessment_scores.push(CaseScore { mrn: case.mrn.clone(), scores: s });
            }
        }
        let n_fail = failures.len();
        rows.push(AblationRow {
            plan: MetricReport::new(fingerprint.clone(), plan_scores, n_fail),
            assessment: (config.planning_method == PlanningMethod::TwoStage)
                .then(|| MetricReport::new(fingerprint, assessment_scores, n_fail)),
            config: config.clone(),
            failures,
            predictions,
        });
    }
    AblationReport { case_count: cases.len(), rows, audit }
}
