use std::fmt;
use std::process::ExitCode;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, or an output that would be overwritten. Exit 1.
    Usage(String),
    /// Unreadable or unusable data. Exit 2.
    Data(String),
    /// An embedding, re-rank or generation provider failed. Exit 3.
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<medplan_core::generation::PipelineError> for CliError {
    fn from(e: medplan_core::generation::PipelineError) -> Self {
        if e.is_provider_failure() {
            CliError::Provider(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<medplan_core::corpus::CorpusError> for CliError {
    fn from(e: medplan_core::corpus::CorpusError) -> Self {
        use medplan_core::corpus::CorpusError;
        match &e {
            CorpusError::Config(_) => CliError::Usage(e.to_string()),
            CorpusError::Export { source, .. } if source.is_provider_failure() => CliError::Provider(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<medplan_core::retrieval::IndexError> for CliError {
    fn from(e: medplan_core::retrieval::IndexError) -> Self {
        match e {
            medplan_core::retrieval::IndexError::Embedding { .. } => CliError::Provider(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
