use std::fmt;
use std::process::ExitCode;

use ildl::IldlError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Solver = 3,
    Incomplete = 4,
}

impl From<ExitKind> for ExitCode {
    fn from(k: ExitKind) -> Self {
        ExitCode::from(k as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Data, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_kind(e: &IldlError) -> ExitKind {
    use IldlError::*;
    match e {
        InvalidHyperparams(_)
        | InvalidNoiseConfig(_)
        | UnsupportedAlpha(_)
        | UnknownMetric(_)
        | BandwidthNonPositive(_)
        | DegenerateInterval { .. } => ExitKind::Usage,
        SvdFailure | SingularSystem(_) | NonFiniteState { .. } | RejectionExhausted(_) => ExitKind::Solver,
        _ => ExitKind::Data,
    }
}

impl From<IldlError> for CliError {
    fn from(e: IldlError) -> Self {
        Self::new(exit_kind(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
