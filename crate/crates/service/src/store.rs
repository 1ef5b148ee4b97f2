//! Patient note storage.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use medplan_core::corpus::{load_corpus, CorpusError, CorpusFormat, CorpusLine, LoadMode};
use medplan_core::soap::{validate_note, NoteRole};
use medplan_core::{PatientRecord, RejectReason, SoapNote};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("note rejected: {0}")]
    Invalid(RejectReason),
    #[error("note is already on record")]
    Duplicate,
    #[error("visit dated {date} precedes the latest visit on record ({latest})")]
    OutOfOrder { date: chrono::NaiveDate, latest: chrono::NaiveDate },
    #[error("patient store: {0}")]
    Io(#[from] std::io::Error),
    #[error("patient store: {0}")]
    Load(#[from] CorpusError),
}

/// Storage behind the history and ingest endpoints.
pub trait PatientStore: Send + Sync {
    fn contains(&self, mrn: &str) -> bool;
    /// Every visit, oldest first; `None` for an unknown patient.
    fn visits(&self, mrn: &str) -> Option<Vec<SoapNote>>;
    /// Appends a visit and returns it with its assigned `visit_seq`.
    fn append(&self, note: SoapNote) -> Result<SoapNote, StoreError>;
    fn patient_count(&self) -> usize;

    /// Up to `limit` visits, most recent first.
    fn history(&self, mrn: &str, limit: usize) -> Option<Vec<SoapNote>> {
        self.visits(mrn).map(|v| v.into_iter().rev().take(limit).collect())
    }
}

/// In-memory store, optionally backed by an append-only log in the corpus
/// line format. Replaying the log reproduces every `visit_seq`.
pub struct FilePatientStore {
    patients: RwLock<HashMap<String, Vec<SoapNote>>>,
    log: Mutex<Option<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl FilePatientStore {
    pub fn in_memory() -> Self {
        FilePatientStore { patients: RwLock::default(), log: Mutex::new(None), path: None }
    }

    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let records = if path.exists() {
            load_corpus(path, CorpusFormat::Jsonl, LoadMode::Strict)?.0
        } else {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let store = FilePatientStore {
            patients: RwLock::new(records.into_iter().map(|r| (r.mrn, r.visits)).collect()),
            log: Mutex::new(Some(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        };
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Store pre-populated with `records`, in memory only.
    pub fn from_records(records: Vec<PatientRecord>) -> Self {
        let store = FilePatientStore::in_memory();
        *store.patients.write().expect("store lock") = records.into_iter().map(|r| (r.mrn, r.visits)).collect();
        store
    }

    /// Writes `records` as a fresh store log at `path`.
    pub fn create(path: &Path, records: &[PatientRecord]) -> Result<Self, StoreError> {
        medplan_core::corpus::write_corpus(records, path)?;
        FilePatientStore::open(path)
    }
}

impl PatientStore for FilePatientStore {
    fn contains(&self, mrn: &str) -> bool {
        self.patients.read().expect("store lock").contains_key(mrn)
    }

    fn visits(&self, mrn: &str) -> Option<Vec<SoapNote>> {
        self.patients.read().expect("store lock").get(mrn).cloned()
    }

    fn append(&self, note: SoapNote) -> Result<SoapNote, StoreError> {
        let mut note = note.normalized();
        validate_note(&note, NoteRole::History).into_result().map_err(StoreError::Invalid)?;
        let mut patients = self.patients.write().expect("store lock");
        let visits = patients.entry(note.mrn.clone()).or_default();
        if visits.iter().any(|v| v.same_content(&note)) {
            return Err(StoreError::Duplicate);
        }
        if let Some(latest) = visits.last() {
            if note.visit_date < latest.visit_date {
                return Err(StoreError::OutOfOrder { date: note.visit_date, latest: latest.visit_date });
            }
        }
        note.visit_seq = visits.len() as u32 + 1;
        if let Some(log) = self.log.lock().expect("log lock").as_mut() {
            let line = serde_json::to_string(&CorpusLine::from_note(&note)).expect("note serializes");
            writeln!(log, "{line}")?;
            log.flush()?;
        }
        visits.push(note.clone());
        Ok(note)
    }

    fn patient_count(&self) -> usize {
        self.patients.read().expect("store lock").len()
    }
}
