//! Training harness, experiment runner, dataset tooling and file formats
//! around the engine in `gplac-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod train;
pub mod viz;

use std::fmt;
use std::path::Path;

/// Harness-level error. The process exit code is derived from the
/// variant: usage problems exit 1, data problems 2, numeric problems 3.
#[derive(Debug)]
pub enum Error {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub fn io(err: std::io::Error, path: &Path) -> Error {
        Error::Data(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<gplac_core::Error> for Error {
    fn from(e: gplac_core::Error) -> Self {
        match e {
            gplac_core::Error::Numeric(m) => Error::Numeric(format!("numeric: {m}")),
            gplac_core::Error::Generation(m) => Error::Data(format!("generation: {m}")),
            other => Error::Usage(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
