use std::process::ExitCode;

use nbs_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, files or schema: exit 2.
    #[error("{0}")]
    Usage(String),
    /// Model or runtime failure: exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

fn is_usage(e: &Error) -> bool {
    match e {
        Error::Config(_) | Error::Formula(_) | Error::Data(_) | Error::Document(_) => true,
        Error::AtLambda { source, .. } => is_usage(source),
        _ => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if is_usage(&e) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}
