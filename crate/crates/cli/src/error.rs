use std::fmt;
use std::process::ExitCode;

use rcodean::Error;

/// A failure together with the process exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VERIFY,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Usage(_)
            | Error::DatasetNotFound(_)
            | Error::Parse { .. }
            | Error::Version { .. } => EXIT_USAGE,
            _ => EXIT_VERIFY,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::verify(format!("I/O error: {e}"))
    }
}
