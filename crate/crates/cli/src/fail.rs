//! Error categories and their exit codes.

use std::path::Path;

use echores::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Internal,
    Config,
    MissingFile,
    Checkpoint,
    Data,
    Diverged,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Internal => 1,
            Kind::Config => 3,
            Kind::MissingFile => 4,
            Kind::Checkpoint => 5,
            Kind::Data => 6,
            Kind::Diverged => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Internal => "internal",
            Kind::Config => "config",
            Kind::MissingFile => "missing-file",
            Kind::Checkpoint => "checkpoint",
            Kind::Data => "data",
            Kind::Diverged => "diverged",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound {
            Kind::MissingFile
        } else {
            Kind::Internal
        };
        Self::new(kind, format!("{}: {e}", path.display()))
    }

    /// `error kind=<name> code=<n>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!("error kind={} code={}: {msg}", self.kind.name(), self.kind.code())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Kind::MissingFile,
            Error::Wav { source: hound::Error::IoError(io), .. }
                if io.kind() == std::io::ErrorKind::NotFound =>
            {
                Kind::MissingFile
            }
            Error::Io { .. } => Kind::Internal,
            Error::Config(_) => Kind::Config,
            Error::Checkpoint(_) | Error::CheckpointMismatch(_) => Kind::Checkpoint,
            Error::NonFiniteLoss { .. } => Kind::Diverged,
            _ => Kind::Data,
        };
        Self::new(kind, e.to_string())
    }
}
