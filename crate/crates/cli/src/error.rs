use std::fmt;

use advx_core::Error as CoreError;
use advx_store::StoreError;

/// What went wrong, which decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Bad flags or flag combinations.
    Usage,
    /// Unreadable or malformed input files.
    Format,
    /// Inputs that parse but disagree with each other.
    Consistency,
}

impl Failure {
    pub fn exit_code(self) -> u8 {
        match self {
            Failure::Usage => 2,
            Failure::Format => 3,
            Failure::Consistency => 4,
        }
    }
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: Failure,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn new(stage: &'static str, kind: Failure, message: impl Into<String>) -> Self {
        CliError {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn usage(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, Failure::Usage, message)
    }

    pub fn format(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, Failure::Format, message)
    }

    pub fn consistency(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, Failure::Consistency, message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn core_kind(e: &CoreError) -> Failure {
    match e {
        CoreError::Parse { .. } | CoreError::UnsupportedVersion { .. } | CoreError::Format(_) | CoreError::Io(_) => {
            Failure::Format
        }
        CoreError::ShapeMismatch { .. }
        | CoreError::InvalidInput(_)
        | CoreError::InvalidNetwork(_)
        | CoreError::Degenerate(_) => Failure::Consistency,
    }
}

fn store_kind(e: &StoreError) -> Failure {
    match e {
        StoreError::Integrity { .. } | StoreError::Format { .. } | StoreError::Io { .. } => Failure::Format,
        StoreError::Consistency(_) => Failure::Consistency,
        StoreError::Core(inner) => core_kind(inner),
    }
}

/// Attaches a stage name to library errors.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for Result<T, CoreError> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, core_kind(&e), e.to_string()))
    }
}

impl<T> Stage<T> for Result<T, StoreError> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, store_kind(&e), e.to_string()))
    }
}

impl<T> Stage<T> for Result<T, serde_json::Error> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::format(stage, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Usage.exit_code(), 2);
        assert_eq!(Failure::Format.exit_code(), 3);
        assert_eq!(Failure::Consistency.exit_code(), 4);
    }

    #[test]
    fn classification() {
        let e: Result<(), _> = Err(CoreError::Format("x".into()));
        assert_eq!(e.stage("ingest").unwrap_err().kind, Failure::Format);
        let e: Result<(), _> = Err(CoreError::Degenerate("x".into()));
        assert_eq!(e.stage("project").unwrap_err().kind, Failure::Consistency);
        let e: Result<(), _> = Err(StoreError::Integrity { file: "a".into() });
        let err = e.stage("serve").unwrap_err();
        assert_eq!(err.kind, Failure::Format);
        assert!(err.to_string().starts_with("serve failed: "));
    }
}
