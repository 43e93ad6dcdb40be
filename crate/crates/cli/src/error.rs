use thiserror::Error;

/// Errors surfaced by the command-line tool, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Core(#[from] l0rcd::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use l0rcd::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::CheckFailed(_) => EXIT_CHECK,
            CliError::Core(e) => match e {
                E::DescentViolation { .. }
                | E::StaleCache { .. }
                | E::InnerMinFailed { .. }
                | E::RestrictedSolveFailed { .. }
                | E::ShortTail { .. } => EXIT_CHECK,
                _ => EXIT_USAGE,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
