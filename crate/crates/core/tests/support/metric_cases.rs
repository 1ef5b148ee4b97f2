//! Hand-checked metric fixtures shared by the oracle tests and the acceptance run.

#![allow(dead_code)]

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bleu,
    Rouge1,
    Rouge2,
    RougeL,
    Meteor,
}

pub struct MetricCase {
    pub metric: Metric,
    pub candidate: &'static str,
    pub reference: &'static str,
    /// Value worked out by hand, where one exists.
    pub pinned: Option<f64>,
    /// Identity cases must hit the analytic maximum exactly.
    pub exact: bool,
}

const fn case(metric: Metric, candidate: &'static str, reference: &'static str, pinned: Option<f64>, exact: bool) -> MetricCase {
    MetricCase { metric, candidate, reference, pinned, exact }
}

use Metric::*;

pub fn metric_cases() -> Vec<MetricCase> {
    let cat = 0.537_284_965_911_770_6; // (5/6 * 3/5 * 2/4 * 1/3)^(1/4) = (1/12)^(1/4)
    vec![
        case(Bleu, "the patient is stable today", "the patient is stable today", Some(1.0), true),
        case(Bleu, "cough and fever", "rash on legs", Some(0.0), true),
        case(Bleu, "the cat sat on the mat", "the cat sat on a mat", Some(cat), false),
        case(Bleu, "", "chest pain", Some(0.0), true),
        case(Bleu, "chest pain", "chest pain", Some(1.0), true),
        case(Bleu, "chest pain at rest", "chest pain at rest since monday morning", None, false),
        case(Bleu, "the the the the", "the cat", None, false),
        case(Bleu, "continue metformin and recheck hba1c in three months", "continue metformin recheck hba1c in 3 months", None, false),
        case(Rouge1, "a b c d", "a c b d", Some(1.0), true),
        case(Rouge1, "increase amlodipine dose", "increase amlodipine dose", Some(1.0), true),
        case(Rouge1, "start omeprazole daily", "omeprazole 20 mg daily", None, false),
        case(Rouge1, "a a a b", "a b b", None, false),
        case(Rouge2, "a b c d", "a c b d", Some(0.0), true),
        case(Rouge2, "start omeprazole 20 mg daily", "omeprazole 20 mg before breakfast daily", None, false),
        case(Rouge2, "single", "single", Some(0.0), true),
        case(RougeL, "a b c d", "a c b d", Some(0.75), false),
        case(RougeL, "follow up in two weeks", "follow up in two weeks", Some(1.0), true),
        case(RougeL, "", "follow up", Some(0.0), true),
        case(RougeL, "refer to cardiology for holter monitor", "holter monitor and cardiology referral", None, false),
        case(Meteor, "running fast", "run fast", Some(0.9375), false),
        case(Meteor, "one two three four five six seven eight nine ten", "one two three four five six seven eight nine ten", Some(0.9995), true),
        case(Meteor, "cough fever", "rash itch", Some(0.0), true),
        case(Meteor, "b a", "a b", None, false),
        case(Meteor, "patients walked slowly home", "patient walks home slowly", None, false),
        case(Meteor, "on the mat the cat sat", "the cat sat on the mat", None, false),
    ]
}
