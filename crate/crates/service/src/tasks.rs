//! Task records, their lifecycle and the optional on-disk journal.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use medplan_core::generation::StageOutput;
use medplan_core::Stage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Assessment,
    Plan,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Failed)
    }

    fn can_become(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!((self, next), (Pending, Running) | (Pending, Failed) | (Running, Done) | (Running, Failed))
    }
}

/// The normalized submission a task was created from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub mrn: String,
    pub subjective: String,
    pub objective: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<String>,
    #[serde(default)]
    pub new_patient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceView {
    pub doc_id: String,
    pub mrn: String,
    pub visit_date: chrono::NaiveDate,
    pub rerank_score: f64,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
}

/// One generated section with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageView {
    pub stage: Stage,
    pub text: String,
    pub provider_tag: String,
    pub prompt_fingerprint: String,
    pub query_text: String,
    pub doc_ids: Vec<String>,
    pub references: Vec<ReferenceView>,
    /// `visit_seq` of each self-history visit in the prompt.
    pub self_history: Vec<u32>,
    pub fallback_used: bool,
    pub prompt_truncated: bool,
    pub elapsed_ms: u64,
}

impl From<&StageOutput> for StageView {
    fn from(out: &StageOutput) -> Self {
        StageView {
            stage: out.result.stage,
            text: out.result.text.clone(),
            provider_tag: out.result.provider_tag.clone(),
            prompt_fingerprint: out.result.prompt_fingerprint.clone(),
            query_text: out.bundle.query_text.clone(),
            doc_ids: out.bundle.doc_ids(),
            references: out
                .bundle
                .cross_patient
                .iter()
                .map(|r| ReferenceView {
                    doc_id: r.doc_id.clone(),
                    mrn: r.note.mrn.clone(),
                    visit_date: r.note.visit_date,
                    rerank_score: r.rerank_score,
                    subjective: r.note.subjective.clone(),
                    objective: r.note.objective.clone(),
                    assessment: r.note.assessment.clone(),
                    plan: r.note.plan.clone(),
                })
                .collect(),
            self_history: out.prompt.history_used.clone(),
            fallback_used: out.bundle.fallback_used,
            prompt_truncated: out.prompt.truncated(),
            elapsed_ms: out.result.elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<StageView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<StageView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub status: TaskStatus,
    pub request: TaskRequest,
    pub result: Option<TaskResult>,
    /// Stages that finished before a failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<TaskResult>,
    pub error: Option<TaskError>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.0.lock().expect("clock lock");
        *now += chrono::Duration::from_std(by).expect("duration in range");
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskStoreError {
    #[error("task journal: {0}")]
    Io(#[from] std::io::Error),
    #[error("task journal line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
    #[error("task {0} not found")]
    NotFound(String),
    #[error("task {id}: cannot move from {from:?} to {to:?}")]
    BadTransition { id: String, from: TaskStatus, to: TaskStatus },
}

#[derive(Default)]
struct Inner {
    tasks: HashMap<String, GenerationTask>,
    issued: HashSet<u128>,
    journal: Option<BufWriter<File>>,
}

/// All tasks of one server, with TTL expiry of finished ones.
pub struct TaskStore {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
}

pub const RESTART_CODE: &str = "restart";

impl TaskStore {
    pub fn in_memory(clock: Arc<dyn Clock>, ttl: Duration) -> Self {
        TaskStore { inner: Mutex::default(), clock, ttl }
    }

    /// Replays the journal at `path`. Tasks that were pending or running when
    /// the previous process stopped come back as failed with code `restart`.
    /// The journal is then compacted to one line per task.
    pub fn open(path: &Path, clock: Arc<dyn Clock>, ttl: Duration) -> Result<Self, TaskStoreError> {
        let mut tasks: HashMap<String, GenerationTask> = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let task: GenerationTask =
                    serde_json::from_str(&line).map_err(|source| TaskStoreError::Corrupt { line: i + 1, source })?;
                tasks.insert(task.task_id.clone(), task);
            }
        } else if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let now = clock.now();
        for task in tasks.values_mut() {
            if !task.status.is_terminal() {
                task.status = TaskStatus::Failed;
                task.result = None;
                task.error = Some(TaskError {
                    code: RESTART_CODE.into(),
                    message: "server restarted before the task finished".into(),
                    stage: None,
                });
                task.updated_at = now;
            }
        }
        let mut ordered: Vec<&GenerationTask> = tasks.values().collect();
        ordered.sort_by(|a, b| (a.created_at, &a.task_id).cmp(&(b.created_at, &b.task_id)));
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for t in ordered {
                writeln!(w, "{}", serde_json::to_string(t).expect("task serializes"))?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        let journal = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        let issued = tasks.keys().filter_map(|id| u128::from_str_radix(id, 16).ok()).collect();
        Ok(TaskStore { inner: Mutex::new(Inner { tasks, issued, journal: Some(journal) }), clock, ttl })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn expired(&self, task: &GenerationTask, now: DateTime<Utc>) -> bool {
        task.status.is_terminal() && now - task.updated_at >= chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX)
    }

    fn record(inner: &mut Inner, task: &GenerationTask) -> Result<(), TaskStoreError> {
        if let Some(j) = inner.journal.as_mut() {
            writeln!(j, "{}", serde_json::to_string(task).expect("task serializes"))?;
            j.flush()?;
        }
        Ok(())
    }

    /// Creates a pending task under a fresh id.
    pub fn create(&self, kind: TaskKind, request: TaskRequest) -> Result<GenerationTask, TaskStoreError> {
        let now = self.clock.now();
        let mut inner = self.inner.lock().expect("task lock");
        self.purge_locked(&mut inner, now);
        let id = loop {
            let candidate: u128 = rand::random();
            if inner.issued.insert(candidate) {
                break candidate;
            }
        };
        let task = GenerationTask {
            task_id: format!("{id:032x}"),
            kind,
            status: TaskStatus::Pending,
            request,
            result: None,
            partial: None,
            error: None,
            created_at: now,
            updated_at: now,
        };
        Self::record(&mut inner, &task)?;
        inner.tasks.insert(task.task_id.clone(), task.clone());
        Ok(task)
    }

    /// Snapshot of a live task; expired tasks are dropped on sight.
    pub fn get(&self, id: &str) -> Option<GenerationTask> {
        let now = self.clock.now();
        let mut inner = self.inner.lock().expect("task lock");
        match inner.tasks.get(id) {
            Some(t) if self.expired(t, now) => {
                inner.tasks.remove(id);
                None
            }
            other => other.cloned(),
        }
    }

    /// Removes a task that never reached the queue.
    pub fn discard(&self, id: &str) {
        self.inner.lock().expect("task lock").tasks.remove(id);
    }

    fn update(&self, id: &str, to: TaskStatus, f: impl FnOnce(&mut GenerationTask)) -> Result<GenerationTask, TaskStoreError> {
        let now = self.clock.now();
        let mut inner = self.inner.lock().expect("task lock");
        let task = inner.tasks.get_mut(id).ok_or_else(|| TaskStoreError::NotFound(id.into()))?;
        if !task.status.can_become(to) {
            return Err(TaskStoreError::BadTransition { id: id.into(), from: task.status, to });
        }
        task.status = to;
        task.updated_at = now;
        f(task);
        let snapshot = task.clone();
        Self::record(&mut inner, &snapshot)?;
        Ok(snapshot)
    }

    pub fn mark_running(&self, id: &str) -> Result<GenerationTask, TaskStoreError> {
        self.update(id, TaskStatus::Running, |_| {})
    }

    pub fn complete(&self, id: &str, result: TaskResult) -> Result<GenerationTask, TaskStoreError> {
        self.update(id, TaskStatus::Done, |t| t.result = Some(result))
    }

    pub fn fail(&self, id: &str, error: TaskError, partial: Option<TaskResult>) -> Result<GenerationTask, TaskStoreError> {
        self.update(id, TaskStatus::Failed, |t| {
            t.error = Some(error);
            t.partial = partial;
        })
    }

    fn purge_locked(&self, inner: &mut Inner, now: DateTime<Utc>) {
        inner.tasks.retain(|_, t| !self.expired(t, now));
    }

    /// Drops every finished task older than the TTL; returns how many went.
    pub fn purge_expired(&self) -> usize {
        let now = self.clock.now();
        let mut inner = self.inner.lock().expect("task lock");
        let before = inner.tasks.len();
        self.purge_locked(&mut inner, now);
        before - inner.tasks.len()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("task lock").tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
