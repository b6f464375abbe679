use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants line up with the failure classes the CLI maps onto exit
/// codes: configuration and data problems, numeric failure, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("state error: {0}")]
    State(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("version error: {0}")]
    Version(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::error::Error::Parameter(format!($($arg)*)) };
}
pub(crate) use param_err;
pub(crate) use shape_err;
