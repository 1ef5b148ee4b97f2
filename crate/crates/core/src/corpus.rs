//! Corpus loading, the patient-centric split and tuning-pair export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SplitConfig};
use crate::generation::{Pipeline, PromptKind, StageError};
use crate::par::Execution;
use crate::retrieval::PatientContext;
use crate::soap::{validate_note, NoteRole, PatientRecord, RejectReason, SoapNote, Stage, MIN_FIELD_CHARS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// What to do with a line that does not parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("need {needed} eligible patients, found {found}")]
    InsufficientPatients { needed: usize, found: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} export for {mrn}: {source}")]
    Export {
        stage: Stage,
        mrn: String,
        #[source]
        source: StageError,
    },
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub mrn: String,
    pub visit_date: NaiveDate,
    pub s: String,
    pub o: String,
    #[serde(default)]
    pub a: String,
    #[serde(default)]
    pub p: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dept: Option<String>,
}

impl CorpusLine {
    pub fn into_note(self) -> SoapNote {
        SoapNote::new(self.mrn, self.visit_date, &self.s, &self.o, &self.a, &self.p).with_department(self.dept)
    }

    pub fn from_note(note: &SoapNote) -> Self {
        CorpusLine {
            mrn: note.mrn.clone(),
            visit_date: note.visit_date,
            s: note.subjective.clone(),
            o: note.objective.clone(),
            a: note.assessment.clone(),
            p: note.plan.clone(),
            dept: note.department.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Non-blank lines seen.
    pub read: usize,
    pub loaded: usize,
    pub patients: usize,
    /// Rejected notes keyed by reason code, duplicates included.
    pub dropped: BTreeMap<String, usize>,
    pub malformed: Vec<MalformedLine>,
}

impl LoadReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    fn drop(&mut self, reason: RejectReason) {
        *self.dropped.entry(reason.code().to_string()).or_default() += 1;
    }
}

/// Reads a corpus file. Records come back sorted by mrn.
pub fn load_corpus(path: &Path, format: CorpusFormat, mode: LoadMode) -> Result<(Vec<PatientRecord>, LoadReport), CorpusError> {
    let CorpusFormat::Jsonl = format;
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(io_err)?);
    }
    parse_corpus(lines.iter().map(String::as_str), mode)
}

/// [`load_corpus`] over in-memory lines.
pub fn parse_corpus<'a>(lines: impl IntoIterator<Item = &'a str>, mode: LoadMode) -> Result<(Vec<PatientRecord>, LoadReport), CorpusError> {
    let mut report = LoadReport::default();
    let mut by_mrn: BTreeMap<String, Vec<SoapNote>> = BTreeMap::new();
    for (i, raw) in lines.into_iter().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        report.read += 1;
        let parsed: CorpusLine = match serde_json::from_str(raw) {
            Ok(p) => p,
            Err(e) => {
                let bad = MalformedLine { line: i + 1, message: e.to_string() };
                if mode == LoadMode::Strict {
                    return Err(CorpusError::Malformed { line: bad.line, message: bad.message });
                }
                report.malformed.push(bad);
                continue;
            }
        };
        let note = parsed.into_note();
        if let Err(reason) = validate_note(&note, NoteRole::History).into_result() {
            report.drop(reason);
            continue;
        }
        let visits = by_mrn.entry(note.mrn.clone()).or_default();
        if visits.iter().any(|v| v.same_content(&note)) {
            report.drop(RejectReason::Duplicate);
            continue;
        }
        visits.push(note);
    }
    let records: Vec<PatientRecord> = by_mrn
        .into_iter()
        .map(|(mrn, notes)| PatientRecord::from_notes(mrn, notes).expect("grouped by mrn"))
        .collect();
    report.loaded = records.iter().map(PatientRecord::len).sum();
    report.patients = records.len();
    Ok((records, report))
}

/// Writes records back in corpus format, one visit per line in record order.
pub fn write_corpus(records: &[PatientRecord], path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for note in records.iter().flat_map(|r| &r.visits) {
        let line = serde_json::to_string(&CorpusLine::from_note(note)).expect("corpus line serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Disjoint patient populations for the knowledge base, training and testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub kb_mrns: BTreeSet<String>,
    pub train_mrns: BTreeSet<String>,
    pub test_mrns: BTreeSet<String>,
    pub seed: u64,
    #[serde(default)]
    pub kb_includes_eval_histories: bool,
}

impl CorpusSplit {
    /// Notes indexed into the knowledge base. With `kb_includes_eval_histories`
    /// the train and test patients contribute every visit except their last.
    pub fn kb_notes(&self, records: &[PatientRecord]) -> Vec<SoapNote> {
        let mut notes = Vec::new();
        for r in records {
            if self.kb_mrns.contains(&r.mrn) {
                notes.extend(r.visits.iter().cloned());
            } else if self.kb_includes_eval_histories && (self.train_mrns.contains(&r.mrn) || self.test_mrns.contains(&r.mrn)) {
                notes.extend(r.visits[..r.len().saturating_sub(1)].iter().cloned());
            }
        }
        notes
    }

    pub fn train_records<'a>(&self, records: &'a [PatientRecord]) -> Vec<&'a PatientRecord> {
        records.iter().filter(|r| self.train_mrns.contains(&r.mrn)).collect()
    }

    pub fn test_records<'a>(&self, records: &'a [PatientRecord]) -> Vec<&'a PatientRecord> {
        records.iter().filter(|r| self.test_mrns.contains(&r.mrn)).collect()
    }
}

/// Shuffles the eligible patients with a seeded RNG, then takes `kb_count`
/// for the knowledge base and the next `eval_count` for train/test.
pub fn split_corpus(records: &[PatientRecord], config: &SplitConfig, seed: u64) -> Result<CorpusSplit, CorpusError> {
    config.validate()?;
    let mut eligible: Vec<&str> = records
        .iter()
        .filter(|r| r.len() >= config.min_visits)
        .map(|r| r.mrn.as_str())
        .collect();
    eligible.sort_unstable();
    eligible.dedup();
    let needed = config.kb_count + config.eval_count;
    if eligible.len() < needed {
        return Err(CorpusError::InsufficientPatients { needed, found: eligible.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let train_count = (config.eval_count as f64 * config.train_ratio).round() as usize;
    let (kb, rest) = eligible.split_at(config.kb_count);
    let (train, test) = rest[..config.eval_count].split_at(train_count);
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    Ok(CorpusSplit {
        kb_mrns: set(kb),
        train_mrns: set(train),
        test_mrns: set(test),
        seed,
        kb_includes_eval_histories: config.kb_includes_eval_histories,
    })
}

/// One supervised example: the prompt a tuned model would see and the text it
/// should produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningPair {
    pub stage: Stage,
    pub input: String,
    pub target: String,
    pub mrn: String,
    pub visit_seq: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPatient {
    pub mrn: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub exported: usize,
    pub skipped: Vec<SkippedPatient>,
}

/// For each train patient with N visits: history is visits 1..N-2 and the
/// target is visit N-1. Plan pairs condition on the ground-truth assessment.
pub fn export_tuning_pairs(
    split: &CorpusSplit,
    records: &[PatientRecord],
    pipeline: &Pipeline,
    stage: Stage,
    exec: Execution,
) -> Result<(Vec<TuningPair>, ExportReport), CorpusError> {
    enum Outcome {
        Pair(TuningPair),
        Skip(SkippedPatient),
    }
    let train = split.train_records(records);
    let outcomes = exec.try_map(&train, |r| -> Result<Outcome, CorpusError> {
        let skip = |reason: &str| Ok(Outcome::Skip(SkippedPatient { mrn: r.mrn.clone(), reason: reason.to_string() }));
        if r.len() < 3 {
            return skip("fewer_than_three_visits");
        }
        let target = &r.visits[r.len() - 2];
        let short = |t: &str| t.chars().count() < MIN_FIELD_CHARS;
        let (kind, text, assessment) = match stage {
            Stage::Assessment => {
                if short(&target.assessment) {
                    return skip(RejectReason::AssessmentTooShort.code());
                }
                (PromptKind::Assessment, &target.assessment, None)
            }
            Stage::Plan => {
                if short(&target.assessment) {
                    return skip(RejectReason::AssessmentTooShort.code());
                }
                if short(&target.plan) {
                    return skip(RejectReason::PlanTooShort.code());
                }
                (PromptKind::Plan, &target.plan, Some(target.assessment.as_str()))
            }
        };
        let patient = PatientContext::new(r.mrn.clone(), r.visits[..r.len() - 2].to_vec());
        let (_, prompt) = pipeline
            .prepare(kind, &target.subjective, &target.objective, assessment, &patient)
            .map_err(|source| CorpusError::Export { stage, mrn: r.mrn.clone(), source })?;
        Ok(Outcome::Pair(TuningPair {
            stage,
            input: prompt.render(),
            target: text.clone(),
            mrn: r.mrn.clone(),
            visit_seq: target.visit_seq,
        }))
    })?;
    let mut pairs = Vec::new();
    let mut report = ExportReport::default();
    for o in outcomes {
        match o {
            Outcome::Pair(p) => pairs.push(p),
            Outcome::Skip(s) => report.skipped.push(s),
        }
    }
    pairs.sort_by(|a, b| (&a.mrn, a.visit_seq).cmp(&(&b.mrn, b.visit_seq)));
    report.exported = pairs.len();
    Ok((pairs, report))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
