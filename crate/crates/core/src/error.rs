use thiserror::Error;

use crate::keyspace::Key;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("key {0} is already stored")]
    DuplicateKey(Key),

    #[error("key {0} is not stored")]
    KeyNotFound(Key),

    #[error("positions {from} and {to} are not adjacent")]
    Adjacency { from: usize, to: usize },

    #[error("cannot move {requested} keys from a node holding {available}")]
    Underflow { requested: u64, available: u64 },

    #[error("node at position {0} does not have an empty range and zero load")]
    NotEmpty(usize),

    #[error("position {pos} out of bounds for {len} nodes")]
    Position { pos: usize, len: usize },

    #[error("event seq {got} does not follow {last}")]
    TraceOrder { last: u64, got: u64 },

    #[error("potential is undefined for an empty system")]
    EmptySystem,

    #[error("check not applicable: {0}")]
    Inapplicable(String),

    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error("empty event log")]
    EmptyLog,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
