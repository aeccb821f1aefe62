use std::fmt;
use std::process::ExitCode;

use stereobias::corpus::CorpusError;
use stereobias::prediction::{PredictError, RecordError};
use stereobias::provider::{ErrorCode, ProviderError};
use stereobias::translate::TranslateError;
use stereobias::DomainError;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Domain = 1,
    Io = 2,
    Config = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

/// An error together with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(status: Status, error: impl Into<anyhow::Error>) -> Self {
        Failure { status, error: error.into() }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Failure::new(Status::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Failure { status: self.status, error: self.error.context(msg) }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait WithStatus<T> {
    fn status(self, status: Status) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithStatus<T> for Result<T, E> {
    fn status(self, status: Status) -> CliResult<T> {
        self.map_err(|e| Failure::new(status, e))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Status::Io, e)
    }
}

impl From<DomainError> for Failure {
    fn from(e: DomainError) -> Self {
        Failure::new(Status::Domain, e)
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match &e {
            CorpusError::Io(_) | CorpusError::Syntax { .. } => Status::Io,
            CorpusError::Config(_) => Status::Config,
            CorpusError::Schema { .. } | CorpusError::FillWord { .. } => Status::Domain,
        };
        Failure::new(status, e)
    }
}

impl From<RecordError> for Failure {
    fn from(e: RecordError) -> Self {
        let status = match &e {
            RecordError::Io(_) => Status::Io,
            RecordError::Malformed { .. } | RecordError::Invalid { .. } => Status::Domain,
        };
        Failure::new(status, e)
    }
}

fn provider_status(e: &ProviderError) -> Status {
    match e {
        ProviderError::Capability(_) | ProviderError::Handshake(_) => Status::Config,
        ProviderError::Remote { code: ErrorCode::Capability | ErrorCode::Handshake, .. } => Status::Config,
        _ => Status::Io,
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        Failure::new(provider_status(&e), e)
    }
}

impl From<PredictError> for Failure {
    fn from(e: PredictError) -> Self {
        let status = match &e {
            PredictError::Config(_) => Status::Config,
            PredictError::Connect(inner) | PredictError::Provider { source: inner, .. } => provider_status(inner),
            PredictError::Example { .. } => Status::Domain,
        };
        Failure::new(status, e)
    }
}

impl From<TranslateError> for Failure {
    fn from(e: TranslateError) -> Self {
        let status = match &e {
            TranslateError::Config(_) => Status::Config,
            TranslateError::Service(_) | TranslateError::Incomplete { .. } | TranslateError::Io(_) => Status::Io,
        };
        Failure::new(status, e)
    }
}
