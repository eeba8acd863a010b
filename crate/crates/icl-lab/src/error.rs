//! Error type shared by the fallible surfaces of the crate (file I/O,
//! on-disk formats, configuration, dataset construction, training runs).
//!
//! Contract violations inside the numeric core (shape mismatches, graph
//! misuse) panic with a descriptive message instead; they are programmer
//! errors, not recoverable conditions.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure (missing file, short read, unwritable path).
    Io(std::io::Error),
    /// A file's bytes do not match the expected on-disk format.
    Format(String),
    /// A configuration key or value is invalid.
    Config(String),
    /// The data pipeline produced or received unusable data.
    Data(String),
    /// A training run failed at runtime (e.g. the loss became non-finite).
    Train(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
