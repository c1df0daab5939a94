use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its allowed domain.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An object was used before it reached the required state.
    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value in {context} (group {group}, response {response}, token {token})")]
    Numerical {
        context: &'static str,
        group: usize,
        response: usize,
        token: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
