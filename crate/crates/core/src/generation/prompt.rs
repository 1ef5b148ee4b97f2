use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenerationError;
use crate::config::PipelineConfig;
use crate::retrieval::ReferenceBundle;
use crate::soap::{SoapNote, Stage};
use crate::text::estimate_tokens;

/// Which template a prompt instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// S + O → A.
    Assessment,
    /// S + O + A → P.
    Plan,
    /// S + O → P, the single-pass baseline.
    DirectPlan,
}

impl PromptKind {
    pub fn stage(self) -> Stage {
        match self {
            PromptKind::Assessment => Stage::Assessment,
            PromptKind::Plan | PromptKind::DirectPlan => Stage::Plan,
        }
    }

    fn role_instruction(self) -> &'static str {
        match self {
            PromptKind::Assessment => {
                "You are an AI medical assistant supporting an outpatient physician. \
                 Work through the case step by step: read the patient's subjective complaints and objective findings, \
                 compare them with the patient's earlier visits and with similar cases from other patients, \
                 then write the clinical assessment for the current visit. Reply with the assessment text only."
            }
            PromptKind::Plan => {
                "You are an AI medical assistant supporting an outpatient physician. \
                 Work through the case step by step: start from the assessment already made for the current visit, \
                 check it against the subjective complaints, the objective findings, the patient's earlier visits \
                 and the plans chosen for similar cases from other patients, then write the treatment plan for the current visit. \
                 Reply with the plan text only."
            }
            PromptKind::DirectPlan => {
                "You are an AI medical assistant supporting an outpatient physician. \
                 Work through the case step by step: read the patient's subjective complaints and objective findings, \
                 compare them with the patient's earlier visits and with similar cases from other patients, \
                 then write the treatment plan for the current visit. Reply with the plan text only."
            }
        }
    }

    fn cue(self) -> &'static str {
        match self {
            PromptKind::Assessment => "Assessment:",
            PromptKind::Plan | PromptKind::DirectPlan => "Plan:",
        }
    }
}

pub(crate) const HISTORY_HEADING: &str = "### Patient History (most recent first)";
pub(crate) const REFERENCES_HEADING: &str = "### Similar Cases From Other Patients";
const CURRENT_HEADING: &str = "### Current Visit";
const GENERATION_HEADING: &str = "### Generation";

/// A fully instantiated prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub stage: Stage,
    pub role_instruction: String,
    pub user_prompt: String,
    pub token_estimate: usize,
    /// Cross-patient references placed in the prompt, rank order.
    pub references_used: Vec<String>,
    /// Visit numbers of the self-history placed in the prompt, most recent first.
    pub history_used: Vec<u32>,
    pub dropped_references: usize,
    pub dropped_history: usize,
}

impl PromptBundle {
    /// Hex SHA-256 over the template kind and both prompt sections.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.kind).as_bytes());
        h.update([0]);
        h.update(self.role_instruction.as_bytes());
        h.update([0]);
        h.update(self.user_prompt.as_bytes());
        hex::encode(h.finalize())
    }

    /// Both sections as one text, the form used for tuning exports.
    pub fn render(&self) -> String {
        format!("### Role & Instruction\n{}\n\n### User Prompt\n{}", self.role_instruction, self.user_prompt)
    }

    pub fn truncated(&self) -> bool {
        self.dropped_references > 0 || self.dropped_history > 0
    }
}

fn history_line(out: &mut String, note: &SoapNote, with_plan: bool) {
    let _ = write!(
        out,
        "Visit {} ({}) — S: {} / O: {} / A: {}",
        note.visit_seq, note.visit_date, note.subjective, note.objective, note.assessment
    );
    if with_plan {
        let _ = write!(out, " / P: {}", note.plan);
    }
    out.push('\n');
}

fn reference_line(out: &mut String, rank: usize, note: &SoapNote, with_plan: bool) {
    let _ = write!(out, "Case {} — S: {} / O: {} / A: {}", rank + 1, note.subjective, note.objective, note.assessment);
    if with_plan {
        let _ = write!(out, " / P: {}", note.plan);
    }
    out.push('\n');
}

struct Parts<'a> {
    kind: PromptKind,
    subjective: &'a str,
    objective: &'a str,
    assessment: Option<&'a str>,
    history: Option<&'a [SoapNote]>,
    references: Option<Vec<&'a SoapNote>>,
}

impl Parts<'_> {
    fn render(&self, n_hist: usize, n_refs: usize) -> String {
        let with_plan = self.kind.stage() == Stage::Plan;
        let mut out = String::new();
        if let Some(history) = self.history {
            out.push_str(HISTORY_HEADING);
            out.push('\n');
            if history.is_empty() {
                out.push_str("(no earlier visits on record)\n");
            }
            for note in &history[..n_hist] {
                history_line(&mut out, note, with_plan);
            }
            out.push('\n');
        }
        if let Some(refs) = &self.references {
            out.push_str(REFERENCES_HEADING);
            out.push('\n');
            if refs.is_empty() {
                out.push_str("(no similar cases found)\n");
            }
            for (rank, note) in refs[..n_refs].iter().enumerate() {
                reference_line(&mut out, rank, note, with_plan);
            }
            out.push('\n');
        }
        out.push_str(CURRENT_HEADING);
        out.push('\n');
        let _ = writeln!(out, "Subjective: {}", self.subjective);
        let _ = writeln!(out, "Objective: {}", self.objective);
        if let Some(a) = self.assessment {
            let _ = writeln!(out, "Assessment: {a}");
        }
        out.push('\n');
        out.push_str(GENERATION_HEADING);
        out.push('\n');
        out.push_str(self.kind.cue());
        out
    }
}

/// Instantiates the template for `kind`.
///
/// Disabled context sources (per `config`) are left out entirely. When the
/// estimate exceeds `config.context_budget_tokens`, the lowest-ranked
/// cross-patient references go first, then the oldest history visits; the
/// most recent visit is never dropped.
pub fn assemble_prompt(
    kind: PromptKind,
    subjective: &str,
    objective: &str,
    assessment: Option<&str>,
    bundle: &ReferenceBundle,
    config: &PipelineConfig,
) -> Result<PromptBundle, GenerationError> {
    if bundle.stage != kind.stage() {
        return Err(GenerationError::StageMismatch { bundle: bundle.stage, prompt: kind.stage() });
    }
    let assessment = match kind {
        PromptKind::Plan => Some(assessment.ok_or(GenerationError::MissingAssessment)?),
        PromptKind::Assessment | PromptKind::DirectPlan => None,
    };
    let parts = Parts {
        kind,
        subjective,
        objective,
        assessment,
        history: config.use_self_history.then_some(bundle.self_history.as_slice()),
        references: config.use_cross_patient.then(|| bundle.cross_patient.iter().map(|r| &r.note).collect()),
    };
    let role = kind.role_instruction();
    let role_tokens = estimate_tokens(role);
    let total_hist = parts.history.map_or(0, <[SoapNote]>::len);
    let total_refs = parts.references.as_ref().map_or(0, Vec::len);
    let (mut n_hist, mut n_refs) = (total_hist, total_refs);
    let mut user = parts.render(n_hist, n_refs);
    while role_tokens + estimate_tokens(&user) > config.context_budget_tokens {
        if n_refs > 0 {
            n_refs -= 1;
        } else if n_hist > 1 {
            n_hist -= 1;
        } else {
            break;
        }
        user = parts.render(n_hist, n_refs);
    }
    Ok(PromptBundle {
        kind,
        stage: kind.stage(),
        role_instruction: role.to_string(),
        token_estimate: role_tokens + estimate_tokens(&user),
        user_prompt: user,
        references_used: if config.use_cross_patient {
            bundle.cross_patient[..n_refs].iter().map(|r| r.doc_id.clone()).collect()
        } else {
            Vec::new()
        },
        history_used: if config.use_self_history {
            bundle.self_history[..n_hist].iter().map(|n| n.visit_seq).collect()
        } else {
            Vec::new()
        },
        dropped_references: total_refs - n_refs,
        dropped_history: total_hist - n_hist,
    })
}
