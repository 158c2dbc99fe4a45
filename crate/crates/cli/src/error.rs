use std::fmt;
use std::process::ExitCode;

/// Exit status of a failed command.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, settings or inputs that do not fit together. Exit 2.
    Config(String),
    /// Missing, unreadable or malformed files. Exit 3.
    Io(String),
    /// An oracle check failed. Exit 4.
    Verify(String),
    /// Anything else, e.g. a non-finite loss. Exit 1.
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Verify(_) => 4,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<refvae::Error> for CliError {
    fn from(e: refvae::Error) -> Self {
        use refvae::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Validation(_) | E::Shape(_) => CliError::Config(msg),
            E::Io { .. } | E::Format(_) | E::Corrupt(_) | E::Checkpoint(_) => CliError::Io(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<candle_core::Error> for CliError {
    fn from(e: candle_core::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
