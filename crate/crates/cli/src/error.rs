use std::fmt;
use std::path::Path;

/// A failed run. Validation errors (bad input, bad settings) exit with 2,
/// internal errors (failed writes, bugs) with 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn write(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Internal(format!("cannot write {}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Internal(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

/// Library errors stem from inputs and settings, so they are validation errors.
impl From<perfest::Error> for CliError {
    fn from(e: perfest::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
