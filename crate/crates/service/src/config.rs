use std::path::{Path, PathBuf};
use std::time::Duration;

use medplan_core::{PipelineConfig, SplitConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Invalid(#[from] medplan_core::config::ConfigError),
}

/// Service-only settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub workers: usize,
    pub queue_capacity: usize,
    pub task_ttl_secs: u64,
    /// Directory for the patient log and the task journal. In-memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Saved knowledge base to load at startup.
    pub kb_dir: Option<PathBuf>,
    /// Reject submissions for unknown patients unless flagged `new_patient`.
    pub strict_mrn: bool,
    /// Add ingested notes to the knowledge base as they arrive.
    pub index_ingested_notes: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            workers: 4,
            queue_capacity: 1024,
            task_ttl_secs: 24 * 60 * 60,
            data_dir: None,
            kb_dir: None,
            strict_mrn: true,
            index_ingested_notes: false,
        }
    }
}

impl ServiceConfig {
    pub fn task_ttl(&self) -> Duration {
        Duration::from_secs(self.task_ttl_secs)
    }
}

/// The shared configuration file read by both the service and the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub split: SplitConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, AppConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| AppConfigError::Io { path: path.into(), source })?;
        let cfg: AppConfig = toml::from_str(&text).map_err(|source| AppConfigError::Parse { path: path.into(), source })?;
        cfg.pipeline.validate()?;
        cfg.split.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg: AppConfig = toml::from_str("[service]\nworkers = 2\n[pipeline]\nn_ref = 3\n").unwrap();
        assert_eq!(cfg.service.workers, 2);
        assert_eq!(cfg.service.queue_capacity, 1024);
        assert_eq!(cfg.pipeline.n_ref, 3);
        assert_eq!(cfg.split.kb_count, 6000);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<AppConfig>("[service]\nworkerz = 2\n").is_err());
    }
}
