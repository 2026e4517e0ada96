use thiserror::Error;

/// Errors raised by the ensemble library.
#[derive(Debug, Error)]
pub enum CsgeError {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no members available")]
    NoMembersAvailable,

    #[error("missing per-lead error for member ({weather}:{power}) at lead {lead}")]
    MissingLead {
        weather: usize,
        power: usize,
        lead: u32,
    },

    #[error("objective is not finite at the initial point")]
    NonFiniteObjective,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("bundle version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CsgeError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CsgeError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CsgeError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CsgeError::Domain(_) => "domain",
            CsgeError::InsufficientData(_) => "insufficient-data",
            CsgeError::NoMembersAvailable => "no-members",
            CsgeError::MissingLead { .. } => "missing-lead",
            CsgeError::NonFiniteObjective => "non-finite-objective",
            CsgeError::Parse { .. } => "parse",
            CsgeError::VersionMismatch { .. } => "version-mismatch",
            CsgeError::InvalidBundle(_) => "invalid-bundle",
            CsgeError::Config(_) => "config",
            CsgeError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CsgeError>;
