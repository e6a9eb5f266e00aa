use std::fmt;

use adat_core::Error;

/// Process exit statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    Ok = 0,
    Internal = 1,
    Usage = 2,
    Io = 3,
    DataFormat = 4,
    Diverged = 5,
    Mismatch = 6,
}

impl ExitCode {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable config file or invalid values.
    Usage(String),
    Config { origin: String, line: usize, msg: String },
    Core(Error),
    Io { path: String, source: std::io::Error },
    /// Malformed input files outside the binary formats.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => ExitCode::Usage,
            CliError::Io { .. } => ExitCode::Io,
            CliError::Data(_) => ExitCode::DataFormat,
            CliError::Core(e) => match e {
                Error::Parse { .. } | Error::UnsupportedVersion { .. } => ExitCode::DataFormat,
                Error::Mismatch(_) => ExitCode::Mismatch,
                Error::Diverged { .. } => ExitCode::Diverged,
                Error::Io(_) => ExitCode::Io,
                _ => ExitCode::Internal,
            },
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Config { origin, line, msg } => write!(f, "{origin}:{line}: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Data(msg) => write!(f, "data: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
