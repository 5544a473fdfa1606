use std::fmt;

/// Error kinds used across the tensor engine, the model builders and the
/// simulator. The CLI maps these onto process exit codes, so the variant
/// carries the *category* and the string carries the detail.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid construction: shape mismatches, impossible architectures.
    Config(String),
    /// A call that violates an operation's contract (non-scalar loss,
    /// missing classifier head, label outside {0,1}, ...).
    Usage(String),
    /// A stateful precondition is unmet (eval-mode batch norm before any
    /// running statistics exist, optimizer step without gradients, ...).
    State(String),
    /// NaN or Inf showed up where only finite values are allowed.
    Numeric(String),
    /// Procedural generation could not satisfy its constraints.
    Generation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
