//! Error taxonomy shared across the crate.

/// Crate-wide error type.
///
/// The CLI maps `Config` and `Parse` to exit code 2 (bad input) and
/// everything else to exit code 1 (runtime failure).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible matrix shapes, naming both operands.
    #[error("{op}: dimension mismatch: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    Dim {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A precondition stated by an operation's contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Filesystem failure, naming the path.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file, with a 1-based line number.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
