use thiserror::Error;

/// Wire-level protocol error codes, fixed across all endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownSession,
    DuplicateSubmission,
    MalformedGroups,
    NotReady,
    NoOverlap,
    UnauthorizedParty,
    LabelFromDataParty,
    Internal,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorCode::UnknownSession => "UNKNOWN_SESSION",
            ErrorCode::DuplicateSubmission => "DUPLICATE_SUBMISSION",
            ErrorCode::MalformedGroups => "MALFORMED_GROUPS",
            ErrorCode::NotReady => "NOT_READY",
            ErrorCode::NoOverlap => "NO_OVERLAP",
            ErrorCode::UnauthorizedParty => "UNAUTHORIZED_PARTY",
            ErrorCode::LabelFromDataParty => "LABEL_FROM_DATA_PARTY",
            ErrorCode::Internal => "INTERNAL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("protocol error {code}: {message}")]
    Protocol { code: ErrorCode, message: String },

    #[error("protocol corruption: {0}")]
    Corruption(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn protocol(code: ErrorCode, message: impl Into<String>) -> Self {
        Error::Protocol {
            code,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
