use std::fmt;

use cbs_core::CbsError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// A required option is missing: exit 1, with usage text.
    Usage(String),
    /// Bad flags or configuration: exit 1.
    Config(String),
    /// Failure while running or writing results: exit 2.
    Runtime(String),
    /// Stopped by SIGINT after flushing partial results: exit 2.
    Interrupted,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Interrupted => 2,
        }
    }

    pub fn config(e: CbsError) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
            CliError::Interrupted => f.write_str("interrupted; partial results were flushed"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
