use std::path::PathBuf;

use thiserror::Error;

use crate::config::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{}", format_numerical(.block, .iteration, .message))]
    Numerical {
        block: &'static str,
        iteration: Option<usize>,
        message: String,
    },

    #[error("validation failed:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unparseable rows at lines {lines:?}: {message}")]
    Parse { lines: Vec<usize>, message: String },

    #[error("duplicate key {0}")]
    Duplicate(String),

    #[error("missing value: {0}")]
    Gap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(block: &'static str, message: impl Into<String>) -> Self {
        Error::Numerical {
            block,
            iteration: None,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the sweep index to a numerical failure raised inside a block.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numerical { block, message, .. } => Error::Numerical {
                block,
                iteration: Some(iteration),
                message,
            },
            other => other,
        }
    }

    /// True for errors caused by invalid user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Schema(_)
                | Error::Parse { .. }
                | Error::Duplicate(_)
                | Error::Config(_)
                | Error::Domain(_)
                | Error::Gap(_)
        )
    }
}

fn format_numerical(block: &str, iteration: &Option<usize>, message: &str) -> String {
    match iteration {
        Some(it) => format!("numerical failure in block `{block}` at iteration {it}: {message}"),
        None => format!("numerical failure in block `{block}`: {message}"),
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
