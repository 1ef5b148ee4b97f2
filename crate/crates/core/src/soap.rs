//! SOAP note domain types and validation.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

/// Which half of the two-stage pipeline a prompt, index or bundle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Assessment,
    Plan,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Assessment => "assessment",
            Stage::Plan => "plan",
        }
    }

    /// Short key used in document ids: `soa` or `soap`.
    pub fn key_kind(self) -> &'static str {
        match self {
            Stage::Assessment => "soa",
            Stage::Plan => "soap",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "assessment" => Ok(Stage::Assessment),
            "plan" => Ok(Stage::Plan),
            other => Err(format!("unknown stage `{other}` (expected assessment or plan)")),
        }
    }
}

/// One visit. Text fields are stored normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoapNote {
    pub mrn: String,
    pub visit_date: NaiveDate,
    /// 1-based position in the patient's chronology, assigned by [`PatientRecord`].
    pub visit_seq: u32,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
}

impl SoapNote {
    /// Builds a note with every text field normalized. `visit_seq` starts at 1
    /// and is reassigned when the note joins a [`PatientRecord`].
    pub fn new(
        mrn: impl Into<String>,
        visit_date: NaiveDate,
        subjective: &str,
        objective: &str,
        assessment: &str,
        plan: &str,
    ) -> Self {
        SoapNote {
            mrn: mrn.into(),
            visit_date,
            visit_seq: 1,
            subjective: normalize_text(subjective),
            objective: normalize_text(objective),
            assessment: normalize_text(assessment),
            plan: normalize_text(plan),
            department: None,
        }
    }

    pub fn with_department(mut self, department: Option<String>) -> Self {
        self.department = department.map(|d| normalize_text(&d)).filter(|d| !d.is_empty());
        self
    }

    /// Returns the note with every text field passed through [`normalize_text`].
    pub fn normalized(mut self) -> Self {
        self.subjective = normalize_text(&self.subjective);
        self.objective = normalize_text(&self.objective);
        self.assessment = normalize_text(&self.assessment);
        self.plan = normalize_text(&self.plan);
        self
    }

    /// Stable document id for this note inside a stage-specific index.
    pub fn doc_id(&self, stage: Stage) -> String {
        format!("{}:{}:{}", self.mrn, self.visit_seq, stage.key_kind())
    }

    /// Same visit content, ignoring `visit_seq`. Used for duplicate detection.
    pub fn same_content(&self, other: &SoapNote) -> bool {
        self.mrn == other.mrn
            && self.visit_date == other.visit_date
            && self.subjective == other.subjective
            && self.objective == other.objective
            && self.assessment == other.assessment
            && self.plan == other.plan
            && self.department == other.department
    }
}

/// What a note is about to be used for; decides which fields must be present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteRole {
    /// Stored history. Only S and O are required.
    History,
    /// Reference in the assessment index: S, O and A required.
    AssessmentReference,
    /// Reference in the plan index, or a generation/evaluation target: all four required.
    Complete,
}

impl NoteRole {
    pub fn for_index(stage: Stage) -> Self {
        match stage {
            Stage::Assessment => NoteRole::AssessmentReference,
            Stage::Plan => NoteRole::Complete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    #[error("subjective_too_short")]
    SubjectiveTooShort,
    #[error("objective_too_short")]
    ObjectiveTooShort,
    #[error("assessment_too_short")]
    AssessmentTooShort,
    #[error("plan_too_short")]
    PlanTooShort,
    #[error("not_normalized")]
    NotNormalized,
    #[error("duplicate")]
    Duplicate,
}

impl RejectReason {
    /// Machine-readable reason code.
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::SubjectiveTooShort => "subjective_too_short",
            RejectReason::ObjectiveTooShort => "objective_too_short",
            RejectReason::AssessmentTooShort => "assessment_too_short",
            RejectReason::PlanTooShort => "plan_too_short",
            RejectReason::NotNormalized => "not_normalized",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }

    pub fn into_result(self) -> Result<(), RejectReason> {
        match self {
            Verdict::Accept => Ok(()),
            Verdict::Reject(r) => Err(r),
        }
    }
}

/// Minimum number of characters a required field must hold.
pub const MIN_FIELD_CHARS: usize = 2;

fn too_short(field: &str) -> bool {
    field.chars().count() < MIN_FIELD_CHARS
}

fn is_flat(field: &str) -> bool {
    !field.contains(['\n', '\r', '\t']) && !field.contains("  ")
}

/// Checks a normalized note against the field requirements of `role`.
pub fn validate_note(note: &SoapNote, role: NoteRole) -> Verdict {
    let fields = [&note.subjective, &note.objective, &note.assessment, &note.plan];
    if !fields.iter().all(|f| is_flat(f)) {
        return Verdict::Reject(RejectReason::NotNormalized);
    }
    if too_short(&note.subjective) {
        return Verdict::Reject(RejectReason::SubjectiveTooShort);
    }
    if too_short(&note.objective) {
        return Verdict::Reject(RejectReason::ObjectiveTooShort);
    }
    if matches!(role, NoteRole::AssessmentReference | NoteRole::Complete) && too_short(&note.assessment) {
        return Verdict::Reject(RejectReason::AssessmentTooShort);
    }
    if role == NoteRole::Complete && too_short(&note.plan) {
        return Verdict::Reject(RejectReason::PlanTooShort);
    }
    Verdict::Accept
}

/// Validates the S/O pair of a live request, after normalizing it.
pub fn validate_inputs(subjective: &str, objective: &str) -> Result<(String, String), RejectReason> {
    let s = normalize_text(subjective);
    let o = normalize_text(objective);
    if too_short(&s) {
        return Err(RejectReason::SubjectiveTooShort);
    }
    if too_short(&o) {
        return Err(RejectReason::ObjectiveTooShort);
    }
    Ok((s, o))
}

/// Normalizes and checks an assessment supplied for plan regeneration.
pub fn validate_assessment(assessment: &str) -> Result<String, RejectReason> {
    let a = normalize_text(assessment);
    if too_short(&a) {
        return Err(RejectReason::AssessmentTooShort);
    }
    Ok(a)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("note for `{found}` cannot join the record of `{expected}`")]
    MrnMismatch { expected: String, found: String },
}

/// All visits of one patient, in chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub mrn: String,
    pub visits: Vec<SoapNote>,
}

impl PatientRecord {
    /// Sorts `notes` by visit date (ties keep the given order) and renumbers
    /// them 1..=n.
    pub fn from_notes(mrn: impl Into<String>, mut notes: Vec<SoapNote>) -> Result<Self, RecordError> {
        let mrn = mrn.into();
        if let Some(bad) = notes.iter().find(|n| n.mrn != mrn) {
            return Err(RecordError::MrnMismatch { expected: mrn, found: bad.mrn.clone() });
        }
        notes.sort_by_key(|n| n.visit_date);
        for (i, note) in notes.iter_mut().enumerate() {
            note.visit_seq = i as u32 + 1;
        }
        Ok(PatientRecord { mrn, visits: notes })
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Up to `limit` visits, most recent first.
    pub fn latest(&self, limit: usize) -> Vec<SoapNote> {
        self.visits.iter().rev().take(limit).cloned().collect()
    }

    pub fn visit(&self, seq: u32) -> Option<&SoapNote> {
        seq.checked_sub(1).and_then(|i| self.visits.get(i as usize))
    }
}
