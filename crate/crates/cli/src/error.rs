use serde::Serialize;
use textlabel_core::ErrorKind;
use textlabel_probe::ProbeError;

/// Failure family; each maps to one process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Validation,
    Numeric,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Validation => 2,
            Kind::Numeric => 3,
            Kind::Io => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Numeric,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Io,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<textlabel_core::Error> for CliError {
    fn from(e: textlabel_core::Error) -> Self {
        let kind = match e.kind() {
            ErrorKind::Validation => Kind::Validation,
            ErrorKind::Numeric => Kind::Numeric,
            ErrorKind::Io => Kind::Io,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        let kind = match e {
            ProbeError::Config(_) | ProbeError::MissingText(_) | ProbeError::TooFewRecords { .. } => Kind::Validation,
            ProbeError::DimensionMismatch { .. } => Kind::Numeric,
            _ => Kind::Io,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
