//! CLI error kinds mapped to exit codes: usage mistakes exit 2, runtime
//! failures exit 1 (argument-parse errors exit 2 via the parser itself).

use std::fmt;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong (bad flag combination, unknown
    /// column, impossible split). Exit code 2.
    Usage(String),
    /// The invocation is fine but the work failed (missing file, broken
    /// checkpoint, numeric failure). Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<lintab::Error> for CliError {
    fn from(err: lintab::Error) -> CliError {
        CliError::Runtime(err.to_string())
    }
}
