//! Asynchronous HTTP front end for the MedPlan pipeline.
//!
//! Submissions return a task id at once; a bounded worker pool runs the
//! pipeline and clients poll `/api/v1/tasks/{id}` for the outcome.

pub mod api;
mod app;
pub mod config;
pub mod store;
pub mod tasks;

pub use api::{ApiError, Submitted, DEFAULT_HISTORY_LIMIT};
pub use app::{serve, serve_on, App, StartupError};
pub use config::{AppConfig, AppConfigError, ServiceConfig};
pub use store::{FilePatientStore, PatientStore, StoreError};
pub use tasks::{
    Clock, GenerationTask, ManualClock, ReferenceView, StageView, SystemClock, TaskError, TaskKind, TaskRequest, TaskResult,
    TaskStatus, TaskStore,
};
