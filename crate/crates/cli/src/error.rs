use std::fmt;
use std::process::ExitCode;

use sealtable::bench::BenchError;
use sealtable::executor::ExecError;
use sealtable::protect::{PersistError, ProtectError};
use sealtable::query::QueryError;
use sealtable::storage::StorageError;

/// Exit statuses. Usage errors (2) come from clap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Usage = 2,
    Io = 3,
    Syntax = 4,
    Semantic = 5,
    Unauthorized = 6,
    Data = 7,
    Mismatch = 8,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn new(status: Status, message: impl fmt::Display) -> Self {
        Self {
            status,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.status as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Status::Io, e)
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        let status = match e {
            StorageError::Io(_) => Status::Io,
            _ => Status::Data,
        };
        Self::new(status, e)
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        let status = match e {
            PersistError::Io { .. } => Status::Io,
            _ => Status::Data,
        };
        Self::new(status, e)
    }
}

impl From<ProtectError> for CliError {
    fn from(e: ProtectError) -> Self {
        match e {
            ProtectError::Storage(s) => s.into(),
            ProtectError::InvalidNoiseFraction(_) => Self::new(Status::Usage, e),
            _ => Self::new(Status::Data, e),
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        let status = match e {
            QueryError::Syntax(_) => Status::Syntax,
            _ => Status::Semantic,
        };
        Self::new(status, e)
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Query(q) => q.into(),
            ExecError::Unauthorized { .. } => Self::new(Status::Unauthorized, e),
            ExecError::NothingEncrypted => Self::new(Status::Semantic, e),
            _ => Self::new(Status::Data, e),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidConfig(_) => Self::new(Status::Usage, e),
            BenchError::MismatchedWorkload { .. } => Self::new(Status::Mismatch, e),
            BenchError::Exec(x) => x.into(),
            BenchError::Protect(x) => x.into(),
            BenchError::Query(x) => x.into(),
            BenchError::Io(x) => x.into(),
            BenchError::Report { .. } => Self::new(Status::Data, e),
        }
    }
}
