use std::fmt;
use std::path::Path;

use heloc_core::downstream::TaskError;
use heloc_core::hcl::CheckpointError;
use heloc_core::{AstError, TrainError};

/// CLI failure carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: missing files, parse failures, malformed CSVs. Exit 2.
    Input(String),
    /// Nothing to optimize. Exit 3.
    Signal(String),
    /// Checkpoint or config mismatch. Exit 4.
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Signal(_) => 3,
            CliError::Model(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) | CliError::Signal(msg) | CliError::Model(msg) => {
                write!(f, "{msg}")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NoTrainingSignal(_) => CliError::Signal(e.to_string()),
            TrainError::EmptyCorpus => CliError::Input(e.to_string()),
            TrainError::LevelOutOfRange { .. } => CliError::Input(e.to_string()),
            TrainError::BadCloneLabel(_) => CliError::Input(e.to_string()),
            TrainError::Shape(_) => CliError::Model(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::KTooLarge { .. } | TaskError::LengthMismatch { .. } | TaskError::Shape(_) => {
                CliError::Model(e.to_string())
            }
            TaskError::EmptyInput
            | TaskError::ZeroVector
            | TaskError::LabelOutOfRange { .. }
            | TaskError::BadCloneLabel(_) => CliError::Input(e.to_string()),
        }
    }
}

/// Attach the offending file to an AST error.
pub fn ast_error(path: &Path, e: AstError) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
