use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Input rejected at load or validation time.
    #[error("rejected: {0}")]
    Rejected(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An engine invariant failed: either a bug or a falsified claim about
    /// the construction.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// The finite horizon ran out before a postcondition could be met.
    #[error("horizon exhausted: {0}")]
    HorizonExhausted(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
