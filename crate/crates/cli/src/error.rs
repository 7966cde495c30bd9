use std::path::Path;

use vix_signals::Error;

/// Exit statuses, also listed in `--help`.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_DATA: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;
pub const EXIT_HASH: i32 = 7;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  usage error
  3  invalid configuration
  4  file could not be read or written
  5  malformed or insufficient market data
  6  numerical failure (singular or non-stationary fit, diverged training, bankrupt path)
  7  artifact was produced under a different config hash

Errors are printed to stderr as one line:
  error code=<n> kind=<kind> message=<text>";

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Config(String),
    Io(String),
    HashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::HashMismatch { .. } => EXIT_HASH,
            CliError::Core(e) => match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Io { .. } => EXIT_IO,
                Error::SingularCovariate { .. }
                | Error::NonStationary { .. }
                | Error::DomainError { .. }
                | Error::DivergedLoss { .. }
                | Error::Bankrupt { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::HashMismatch { .. } => "config_hash_mismatch",
            CliError::Core(e) => e.kind(),
        }
    }

    /// `error code=.. kind=.. message=..` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!(
            "error code={} kind={} message={msg}",
            self.code(),
            self.kind()
        )
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::HashMismatch {
                artifact,
                expected,
                found,
            } => write!(
                f,
                "{artifact} was written under config hash {found}, current config is {expected}"
            ),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(Error::Csv(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Serde(e))
    }
}
