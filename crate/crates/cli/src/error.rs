use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: malformed files, invalid seeds, precondition violations.
    #[error("{0}")]
    Validation(String),
    /// The numerics broke down (degenerate model, failed factorisation).
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn context(self, path: &Path) -> CliError {
        let wrap = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Validation(m) => CliError::Validation(wrap(m)),
            CliError::Numerical(m) => CliError::Numerical(wrap(m)),
            CliError::Io(m) => CliError::Io(wrap(m)),
        }
    }
}

impl From<symtn::Error> for CliError {
    fn from(e: symtn::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}
