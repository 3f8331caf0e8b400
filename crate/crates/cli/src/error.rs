//! Errors carrying the process exit code.

use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// A library error raised while interpreting configuration values.
    pub fn config(e: kdemu::Error) -> Self {
        if e.is_numerical() {
            e.into()
        } else {
            Self::usage(e.to_string())
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<kdemu::Error> for CliError {
    fn from(e: kdemu::Error) -> Self {
        use kdemu::Error as E;
        let code = match &e {
            _ if e.is_numerical() => EXIT_NUMERICAL,
            E::InvalidArgument(_) | E::Unsupported(_) | E::InfeasibleMix(_) | E::ClusterTooSmall { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}
