use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema violation or an invalid parameter value; `path` names the offending field.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("solver failure: {0}")]
    Solver(rwrc::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything the user can fix in the config, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        let kind = match self {
            Self::Config { .. } => "config",
            Self::Solver(_) => "solver",
            Self::Io { .. } => "io",
            Self::Csv(_) => "output",
        };
        let mut body = json!({ "kind": kind, "message": self.to_string() });
        if let Self::Config { path, .. } = self {
            body["path"] = Value::String(path.clone());
        }
        json!({ "error": body })
    }
}

/// Library errors caused by the inputs count as config errors, attributed to `params`.
impl From<rwrc::Error> for CliError {
    fn from(e: rwrc::Error) -> Self {
        use rwrc::Error as E;
        match &e {
            E::InvalidParameter { name, .. } => Self::config(format!("params.{name}"), e.to_string()),
            E::DegenerateBox { .. } | E::NotInBox(_) | E::DimensionMismatch { .. } | E::RegimeMismatch(_) => {
                Self::config("params", e.to_string())
            }
            _ => Self::Solver(e),
        }
    }
}
