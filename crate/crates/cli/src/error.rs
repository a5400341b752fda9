//! Process-level error type; every variant owns one exit code.

use std::fmt;

/// Exit code for a successfully completed command.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad flags, bad configuration, or invalid combinations.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for missing, corrupt, or conflicting files and datasets.
pub const EXIT_DATA: i32 = 3;
/// Exit code for diverged training or non-finite numerics.
pub const EXIT_NUMERIC: i32 = 4;

/// A failed command, classified by what the user has to fix.
#[derive(Debug)]
pub enum CliError {
    /// Flag, config file, or combination problems.
    Usage(String),
    /// File and dataset problems.
    Data(String),
    /// Numeric divergence during training or preprocessing.
    Numeric(String),
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        CliError::Numeric(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Numeric(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}
