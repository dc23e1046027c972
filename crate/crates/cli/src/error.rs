use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mcpm_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed artifact written by an earlier command.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown token {surface:?}; nearest matches: {}", suggestions.join(", "))]
    UnknownSurface {
        surface: String,
        suggestions: Vec<String>,
    },

    #[error("port {0} is already in use")]
    PortInUse(u16),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for unreadable or malformed input, 3 for
    /// invariant violations, 4 for an unknown token, 5 for a busy port.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(mcpm_core::Error::Io { .. } | mcpm_core::Error::Parse { .. }) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Core(_) | CliError::Config(_) => 3,
            CliError::UnknownSurface { .. } => 4,
            CliError::PortInUse(_) => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let parse = CliError::Core(mcpm_core::Error::Parse {
            path: "a.tsv".into(),
            line: 3,
            message: "bad".into(),
        });
        assert_eq!(parse.exit_code(), 2);
        assert!(parse.to_string().contains("a.tsv:3"));
        assert_eq!(CliError::Core(mcpm_core::Error::EmptyCloud).exit_code(), 3);
        assert_eq!(CliError::Config("x".into()).exit_code(), 3);
        let unknown = CliError::UnknownSurface {
            surface: "cat".into(),
            suggestions: vec!["car".into(), "cart".into()],
        };
        assert_eq!(unknown.exit_code(), 4);
        assert!(unknown.to_string().contains("car, cart"));
        assert_eq!(CliError::PortInUse(80).exit_code(), 5);
    }
}
