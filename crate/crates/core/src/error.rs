use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid value for `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("series of length {len} is too short (need at least {required})")]
    SeriesTooShort { len: usize, required: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("constant series has zero standard deviation")]
    ConstantSeries,

    #[error("unconstrained vector has length {found}, expected {expected}")]
    WrongLength { expected: usize, found: usize },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite objective at iteration {iteration}")]
    OptimiserDiverged { iteration: usize },

    #[error("no proposal accepted during {burnin} burn-in iterations")]
    ZeroAcceptance { burnin: usize },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_)
            | Error::OptimiserDiverged { .. }
            | Error::ZeroAcceptance { .. } => true,
            Error::Window { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit status: 2 for configuration errors, 3 for data errors,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_numerical() => 4,
            Error::Config(_) | Error::InvalidParameter { .. } => 2,
            Error::Window { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value })
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
