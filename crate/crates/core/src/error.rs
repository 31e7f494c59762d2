use thiserror::Error;

/// Errors raised anywhere in the quantization toolkit.
///
/// Each variant maps to a stable short code (see [`Error::code`]) which the
/// command-line front end prints and converts into an exit status.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unknown format `{0}`")]
    UnknownFormat(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("unsupported file version {found} (newest supported is {supported})")]
    Version { found: u16, supported: u16 },
    #[error("budget error: {0}")]
    Budget(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code for this error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "E_SHAPE",
            Error::Parameter(_) => "E_PARAM",
            Error::Convergence { .. } => "E_CONVERGENCE",
            Error::Numeric(_) => "E_NUMERIC",
            Error::UnknownFormat(_) => "E_LOOKUP",
            Error::Format(_) => "E_FORMAT",
            Error::Corrupt { .. } => "E_CORRUPT",
            Error::Version { .. } => "E_VERSION",
            Error::Budget(_) => "E_BUDGET",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
