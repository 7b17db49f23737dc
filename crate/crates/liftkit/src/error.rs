use std::fmt;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// config/usage problems, data problems, and numerical failures.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or invalid arguments to an operation.
    Config(String),
    /// Shape or skeleton mismatch between inputs.
    Shape(String),
    /// Malformed or inconsistent data, optionally with the offending record line.
    Data { line: Option<usize>, msg: String },
    /// A numerical procedure failed to converge or hit a degenerate input.
    Numerical(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data { line: None, msg: msg.into() }
    }

    pub fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data { line: Some(line), msg: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code class for this error: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 1,
            Error::Data { .. } | Error::Io(_) | Error::Json(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Data { line: Some(n), msg } => write!(f, "data error at line {n}: {msg}"),
            Error::Data { line: None, msg } => write!(f, "data error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
