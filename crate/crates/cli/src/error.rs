use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Index(#[from] lshensemble::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Http(String),
    #[error("{0}")]
    Protocol(String),
    #[error("shards unavailable: {}", .0.join(", "))]
    MissingShards(Vec<String>),
}

impl CliError {
    /// Stable, machine-parsable category printed before the message.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Index(e) => match e {
                lshensemble::Error::InvalidArgument(_) => "invalid_argument",
                lshensemble::Error::EmptyDomain(_) => "empty_domain",
                lshensemble::Error::Incompatible(_) => "incompatible",
                lshensemble::Error::Parse(_) | lshensemble::Error::Json(_) => "parse",
                lshensemble::Error::Record { .. } => "record",
                lshensemble::Error::DuplicateId(_) => "duplicate_id",
                lshensemble::Error::Lifecycle(_) => "lifecycle",
                lshensemble::Error::TooLarge(_) => "too_large",
                lshensemble::Error::Io { .. } => "io",
            },
            CliError::Io { .. } => "io",
            CliError::Http(_) => "http",
            CliError::Protocol(_) => "protocol",
            CliError::MissingShards(_) => "missing_shards",
        }
    }

    /// Process exit status: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {}: {}", self.kind(), msg.trim())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
