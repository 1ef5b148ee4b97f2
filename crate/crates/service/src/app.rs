//! Shared server state and the generation worker pool.

use std::sync::{Arc, Mutex, RwLock};

use medplan_core::generation::{Pipeline, PipelineError};
use medplan_core::retrieval::{KnowledgeBase, PatientContext};
use medplan_core::SoapNote;
use tokio::sync::{mpsc, Semaphore};

use crate::config::{AppConfig, ServiceConfig};
use crate::store::{FilePatientStore, PatientStore, StoreError};
use crate::tasks::{Clock, SystemClock, TaskError, TaskKind, TaskResult, TaskStore, TaskStoreError};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] medplan_core::config::ConfigError),
    #[error("knowledge base: {0}")]
    KnowledgeBase(#[from] medplan_core::retrieval::IndexError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tasks(#[from] TaskStoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) struct Job {
    pub task_id: String,
    pub kind: TaskKind,
    pub patient: PatientContext,
}

pub(crate) struct State {
    pub config: ServiceConfig,
    pipeline: RwLock<Pipeline>,
    pub store: Arc<dyn PatientStore>,
    pub tasks: Arc<TaskStore>,
    pub queue: mpsc::Sender<Job>,
    ingest_lock: Mutex<()>,
}

impl State {
    pub fn pipeline(&self) -> Pipeline {
        self.pipeline.read().expect("pipeline lock").clone()
    }

    /// Appends a note and, when configured, indexes it into the knowledge base.
    pub fn ingest(&self, note: SoapNote) -> Result<SoapNote, StoreError> {
        let _guard = self.ingest_lock.lock().expect("ingest lock");
        let stored = self.store.append(note)?;
        if self.config.index_ingested_notes {
            let current = self.pipeline();
            match current.knowledge_base().with_note(&stored, current.embeddings()) {
                Ok(kb) => *self.pipeline.write().expect("pipeline lock") = current.with_knowledge_base(Arc::new(kb)),
                Err(e) => tracing::warn!(doc = %stored.doc_id(medplan_core::Stage::Plan), error = %e, "note stored but not indexed"),
            }
        }
        Ok(stored)
    }
}

/// A running service instance. Cloning shares the same state.
#[derive(Clone)]
pub struct App {
    pub(crate) state: Arc<State>,
}

impl App {
    /// Starts the worker pool on the current tokio runtime.
    pub fn new(config: ServiceConfig, pipeline: Pipeline, store: Arc<dyn PatientStore>, tasks: Arc<TaskStore>) -> Self {
        let (tx, rx) = mpsc::channel(config.queue_capacity.max(1));
        let state = Arc::new(State {
            pipeline: RwLock::new(pipeline),
            store,
            tasks,
            queue: tx,
            ingest_lock: Mutex::new(()),
            config,
        });
        tokio::spawn(dispatch(Arc::downgrade(&state), rx));
        App { state }
    }

    /// Builds the stores and pipeline described by `config`: persistent under
    /// `data_dir` when set, in memory otherwise.
    pub fn from_config(config: &AppConfig, clock: Arc<dyn Clock>) -> Result<Self, StartupError> {
        let svc = &config.service;
        let kb = match &svc.kb_dir {
            Some(dir) => KnowledgeBase::load(dir)?,
            None => KnowledgeBase::empty(),
        };
        let pipeline = Pipeline::from_config(config.pipeline.clone(), Arc::new(kb))?;
        let (store, tasks): (Arc<dyn PatientStore>, TaskStore) = match &svc.data_dir {
            Some(dir) => (
                Arc::new(FilePatientStore::open(&dir.join("patients.jsonl"))?),
                TaskStore::open(&dir.join("tasks.jsonl"), clock, svc.task_ttl())?,
            ),
            None => (Arc::new(FilePatientStore::in_memory()), TaskStore::in_memory(clock, svc.task_ttl())),
        };
        Ok(App::new(svc.clone(), pipeline, store, Arc::new(tasks)))
    }

    pub fn tasks(&self) -> &Arc<TaskStore> {
        &self.state.tasks
    }

    pub fn store(&self) -> &Arc<dyn PatientStore> {
        &self.state.store
    }

    pub fn pipeline(&self) -> Pipeline {
        self.state.pipeline()
    }

    pub fn router(&self) -> axum::Router {
        crate::api::router(self.state.clone())
    }
}

/// Binds `config.service.bind` and serves until the process is stopped.
pub async fn serve(config: &AppConfig) -> Result<(), StartupError> {
    let app = App::from_config(config, Arc::new(SystemClock))?;
    let addr = config.service.bind.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|source| StartupError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr()?, workers = config.service.workers, "listening");
    serve_on(app, listener).await
}

pub async fn serve_on(app: App, listener: tokio::net::TcpListener) -> Result<(), StartupError> {
    axum::serve(listener, app.router()).await?;
    Ok(())
}

async fn dispatch(state: std::sync::Weak<State>, mut rx: mpsc::Receiver<Job>) {
    let workers = match state.upgrade() {
        Some(s) => s.config.workers.max(1),
        None => return,
    };
    let permits = Arc::new(Semaphore::new(workers));
    while let Some(job) = rx.recv().await {
        let Ok(permit) = permits.clone().acquire_owned().await else { break };
        let Some(state) = state.upgrade() else { break };
        tokio::spawn(async move {
            let tasks = state.tasks.clone();
            let id = job.task_id.clone();
            let outcome = tokio::task::spawn_blocking(move || execute(&state, job)).await;
            if let Err(e) = outcome {
                let error = TaskError { code: "internal".into(), message: format!("worker crashed: {e}"), stage: None };
                let _ = tasks.fail(&id, error, None);
            }
            drop(permit);
        });
    }
}

fn stage_number(stage: medplan_core::Stage) -> u8 {
    match stage {
        medplan_core::Stage::Assessment => 1,
        medplan_core::Stage::Plan => 2,
    }
}

fn task_error(e: &PipelineError) -> TaskError {
    match e {
        PipelineError::InvalidInput(r) => TaskError { code: r.code().into(), message: e.to_string(), stage: None },
        PipelineError::Stage { stage, source, .. } => TaskError {
            code: if e.is_provider_failure() { "provider_error" } else { "stage_failed" }.into(),
            message: format!("stage {} ({stage}) failed: {source}", stage_number(*stage)),
            stage: Some(*stage),
        },
    }
}

fn execute(state: &State, job: Job) {
    let tasks = &state.tasks;
    let Some(task) = tasks.get(&job.task_id) else { return };
    if let Err(e) = tasks.mark_running(&job.task_id) {
        tracing::warn!(task = %job.task_id, error = %e, "task not runnable");
        return;
    }
    let pipeline = state.pipeline();
    let req = &task.request;
    let outcome = match job.kind {
        TaskKind::Assessment => pipeline
            .run_assessment(&req.subjective, &req.objective, &job.patient)
            .map(|a| TaskResult { assessment: Some((&a).into()), plan: None }),
        TaskKind::Plan => pipeline
            .regenerate_plan(&req.subjective, &req.objective, req.assessment.as_deref().unwrap_or_default(), &job.patient)
            .map(|p| TaskResult { assessment: None, plan: Some((&p).into()) }),
        TaskKind::Pipeline => pipeline
            .run_two_stage(&req.subjective, &req.objective, &job.patient)
            .map(|out| TaskResult { assessment: Some((&out.assessment).into()), plan: Some((&out.plan).into()) }),
    };
    let written = match outcome {
        Ok(result) => tasks.complete(&job.task_id, result),
        Err(e) => {
            tracing::info!(task = %job.task_id, error = %e, "task failed");
            let partial = match &e {
                PipelineError::Stage { partial: Some(p), .. } => Some(TaskResult { assessment: Some(p.as_ref().into()), plan: None }),
                _ => None,
            };
            tasks.fail(&job.task_id, task_error(&e), partial)
        }
    };
    if let Err(e) = written {
        tracing::error!(task = %job.task_id, error = %e, "cannot record task outcome");
    }
}

