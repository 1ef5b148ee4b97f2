//! Seeded synthetic outpatient corpus for tests, benches and demos.
//!
//! Every assessment and plan carries a tag unique to its patient and visit
//! (`p0007v03`), so substring leakage scans are not fooled by shared wording.

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::soap::{PatientRecord, SoapNote};

struct Condition {
    dept: &'static str,
    subjective: &'static [&'static str],
    objective: &'static [&'static str],
    assessment: &'static [&'static str],
    plan: &'static [&'static str],
}

const CONDITIONS: &[Condition] = &[
    Condition {
        dept: "cardiology",
        subjective: &["chest tightness on exertion", "palpitations at night", "shortness of breath climbing stairs", "ankle swelling"],
        objective: &["BP 148/92 HR 88", "BP 132/84 HR 72 regular", "ECG sinus rhythm", "mild pitting edema bilateral"],
        assessment: &["hypertension suboptimal control", "stable angina", "paroxysmal atrial fibrillation suspected", "heart failure compensated"],
        plan: &["increase amlodipine to 10 mg daily", "continue aspirin and statin", "order holter monitor", "furosemide 20 mg and recheck renal function"],
    },
    Condition {
        dept: "endocrinology",
        subjective: &["polyuria and thirst", "fatigue and weight gain", "tremor and heat intolerance", "numbness in feet"],
        objective: &["HbA1c 8.4 percent", "TSH 7.2 elevated", "fasting glucose 162", "monofilament sensation reduced"],
        assessment: &["type 2 diabetes poorly controlled", "subclinical hypothyroidism", "diabetic peripheral neuropathy", "hyperthyroidism"],
        plan: &["add metformin 500 mg twice daily", "start levothyroxine 25 mcg", "refer podiatry and foot care education", "recheck thyroid panel in six weeks"],
    },
    Condition {
        dept: "pulmonology",
        subjective: &["productive cough for two weeks", "wheezing at night", "dyspnea on exertion", "chronic morning cough"],
        objective: &["scattered wheeze on auscultation", "SpO2 94 percent room air", "FEV1 62 percent predicted", "crackles right base"],
        assessment: &["asthma exacerbation mild", "COPD stable", "community acquired pneumonia", "acute bronchitis"],
        plan: &["inhaled budesonide formoterol", "tiotropium daily and pulmonary rehab", "amoxicillin 1 g three times daily", "supportive care and fluids"],
    },
    Condition {
        dept: "gastroenterology",
        subjective: &["epigastric burning after meals", "intermittent diarrhea", "bloating and constipation", "dark stools"],
        objective: &["epigastric tenderness", "abdomen soft nontender", "hemoglobin 10.9", "stool occult blood positive"],
        assessment: &["gastroesophageal reflux disease", "irritable bowel syndrome", "iron deficiency anemia", "peptic ulcer suspected"],
        plan: &["omeprazole 20 mg before breakfast", "fiber supplement and diet diary", "ferrous sulfate and colonoscopy referral", "urgent upper endoscopy"],
    },
    Condition {
        dept: "neurology",
        subjective: &["throbbing headache with nausea", "dizziness when standing", "tingling in hands", "memory lapses"],
        objective: &["neuro exam nonfocal", "orthostatic drop 20 mmHg", "Tinel sign positive", "MMSE 26 of 30"],
        assessment: &["migraine without aura", "orthostatic hypotension", "carpal tunnel syndrome", "mild cognitive impairment"],
        plan: &["sumatriptan as needed and sleep hygiene", "increase fluids and review antihypertensives", "wrist splint at night", "cognitive testing follow up in six months"],
    },
];

/// Knobs for [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub patients: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Fraction of patients given only two visits, below the eligibility bar.
    pub short_patient_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { patients: 60, min_visits: 3, max_visits: 6, short_patient_rate: 0.0, seed: 42 }
    }
}

pub fn patient_mrn(i: usize) -> String {
    format!("P{i:04}")
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty vocabulary")
}

/// Generates `config.patients` records, sorted by mrn.
pub fn synthesize(config: &SynthConfig) -> Vec<PatientRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    (0..config.patients)
        .map(|i| {
            let mrn = patient_mrn(i);
            let visits = if rng.random_bool(config.short_patient_rate.clamp(0.0, 1.0)) {
                2
            } else {
                rng.random_range(config.min_visits..=config.max_visits.max(config.min_visits))
            };
            let primary = rng.random_range(0..CONDITIONS.len());
            let mut date = base + Days::new(rng.random_range(0..365));
            let notes = (1..=visits)
                .map(|v| {
                    // Mostly the chronic condition, sometimes an intercurrent one.
                    let c = if rng.random_bool(0.75) { &CONDITIONS[primary] } else { CONDITIONS.choose(&mut rng).expect("non-empty") };
                    let tag = format!("p{i:04}v{v:02}");
                    let s = format!("{}, {}", pick(&mut rng, c.subjective), pick(&mut rng, c.subjective));
                    let o = pick(&mut rng, c.objective).to_string();
                    let a = format!("{} {tag}", pick(&mut rng, c.assessment));
                    let p = format!("{}; follow up {tag}", pick(&mut rng, c.plan));
                    let note = SoapNote::new(&mrn, date, &s, &o, &a, &p).with_department(Some(c.dept.to_string()));
                    date = date + Days::new(rng.random_range(7..120));
                    note
                })
                .collect();
            PatientRecord::from_notes(mrn, notes).expect("single mrn")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { patients: 20, ..Default::default() };
        assert_eq!(synthesize(&cfg), synthesize(&cfg));
        let other = synthesize(&SynthConfig { seed: 43, ..cfg.clone() });
        assert_ne!(synthesize(&cfg), other);
    }

    #[test]
    fn respects_visit_bounds() {
        let cfg = SynthConfig { patients: 50, min_visits: 3, max_visits: 5, short_patient_rate: 0.2, seed: 1 };
        let records = synthesize(&cfg);
        assert!(records.iter().all(|r| (2..=5).contains(&r.len())));
        assert!(records.iter().any(|r| r.len() == 2));
        for r in &records {
            assert!(r.visits.windows(2).all(|w| w[0].visit_date < w[1].visit_date));
        }
    }

    #[test]
    fn tags_are_unique() {
        let records = synthesize(&SynthConfig::default());
        let tags: std::collections::HashSet<_> = records
            .iter()
            .flat_map(|r| &r.visits)
            .map(|v| v.assessment.rsplit(' ').next().unwrap().to_string())
            .collect();
        assert_eq!(tags.len(), records.iter().map(PatientRecord::len).sum::<usize>());
    }
}
