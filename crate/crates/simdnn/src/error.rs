use std::fmt;

/// Error category, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

/// Unified error type for the simulator.
#[derive(Debug)]
pub enum SimError {
    /// A configuration value is out of range or inconsistent.
    Config { field: String, message: String },
    /// A data file could not be read or parsed.
    Data { message: String },
    /// Malformed IDX container; `offset` is the byte offset of the defect.
    Parse { message: String, offset: usize },
    /// Array shapes disagree.
    Dimension { expected: String, actual: String, context: String },
    /// A numerical computation produced a non-finite or singular value.
    Numeric { message: String },
    Io(std::io::Error),
}

impl SimError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config { field: field.into(), message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        SimError::Data { message: message.into() }
    }

    pub fn parse(message: impl Into<String>, offset: usize) -> Self {
        SimError::Parse { message: message.into(), offset }
    }

    pub fn dimension(
        expected: impl Into<String>,
        actual: impl Into<String>,
        context: impl Into<String>,
    ) -> Self {
        SimError::Dimension {
            expected: expected.into(),
            actual: actual.into(),
            context: context.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        SimError::Numeric { message: message.into() }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            SimError::Config { .. } => ErrorCategory::Config,
            SimError::Data { .. } | SimError::Parse { .. } | SimError::Io(_) => {
                ErrorCategory::Data
            }
            SimError::Dimension { .. } => ErrorCategory::Config,
            SimError::Numeric { .. } => ErrorCategory::Numeric,
        }
    }
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Config { field, message } => {
                write!(f, "config error: {field}: {message}")
            }
            SimError::Data { message } => write!(f, "data error: {message}"),
            SimError::Parse { message, offset } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
            SimError::Dimension { expected, actual, context } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {actual}")
            }
            SimError::Numeric { message } => write!(f, "numeric error: {message}"),
            SimError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for SimError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SimError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
