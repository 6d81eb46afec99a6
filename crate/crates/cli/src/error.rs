use std::fmt;

/// Stable error classes. Resolution problems exit 2, everything that breaks
/// during a run exits 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Suite,
    Model,
    Profile,
    Config,
    Input,
    Sandbox,
    Client,
    Io,
    Cancelled,
}

impl ErrorKind {
    pub fn id(self) -> &'static str {
        match self {
            ErrorKind::Suite => "E-SUITE",
            ErrorKind::Model => "E-MODEL",
            ErrorKind::Profile => "E-PROFILE",
            ErrorKind::Config => "E-CONFIG",
            ErrorKind::Input => "E-INPUT",
            ErrorKind::Sandbox => "E-SANDBOX",
            ErrorKind::Client => "E-CLIENT",
            ErrorKind::Io => "E-IO",
            ErrorKind::Cancelled => "E-CANCELLED",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Suite
            | ErrorKind::Model
            | ErrorKind::Profile
            | ErrorKind::Config
            | ErrorKind::Input => 2,
            ErrorKind::Sandbox | ErrorKind::Client | ErrorKind::Io | ErrorKind::Cancelled => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind.id(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) trait Context<T> {
    fn kind(self, kind: ErrorKind) -> CliResult<T>;
    fn with(self, kind: ErrorKind, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn kind(self, kind: ErrorKind) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e))
    }

    fn with(self, kind: ErrorKind, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, format!("{what}: {e}")))
    }
}
