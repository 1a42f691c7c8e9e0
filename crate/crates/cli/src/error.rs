use std::fmt;
use std::io;

use specgr_core::catalog::CatalogError;
use specgr_core::engine::EngineError;
use specgr_core::eval::EvalError;
use specgr_core::seqmodel::ModelError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config, missing or conflicting upstream artifacts.
    Usage(String),
    /// Malformed or inconsistent input data.
    Data(String),
    /// The configured scorer or index lacks a required capability.
    Capability(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Capability(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Capability(m) => write!(f, "capability mismatch: {m}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io(io) => io.into(),
            CatalogError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Unsupported(what) => {
                CliError::Capability(format!("scorer does not support {what}"))
            }
            ModelError::Io(io) => io.into(),
            ModelError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(m) => m.into(),
            EngineError::InvalidConfig(m) => CliError::Usage(m),
            EngineError::EmptyHistory => CliError::Usage("history is empty".into()),
            EngineError::UnknownItem(i) => CliError::Data(format!("item index {i} outside catalog")),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(e) => e.into(),
            EvalError::Catalog(e) => e.into(),
            EvalError::Model(e) => e.into(),
            EvalError::Io(e) => e.into(),
            EvalError::InvalidConfig(m) | EvalError::InvalidSplit(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}
