use std::io;

use thiserror::Error;

/// Which side of the protocol raised an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Server,
    Client(usize),
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Party::Server => write!(f, "server"),
            Party::Client(m) => write!(f, "client {m}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("protocol-order error at {party}: {msg}")]
    ProtocolOrder { party: Party, msg: String },
    #[error("protocol error in round {round} at {party}: {msg}")]
    Protocol {
        round: u64,
        party: Party,
        msg: String,
    },
    #[error("wire format error: {0}")]
    Wire(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::Shape(format!("expected {expected}, got {got}"))
    }

    pub(crate) fn order(party: Party, msg: impl Into<String>) -> Self {
        Error::ProtocolOrder {
            party,
            msg: msg.into(),
        }
    }

    pub(crate) fn protocol(round: u64, party: Party, msg: impl Into<String>) -> Self {
        Error::Protocol {
            round,
            party,
            msg: msg.into(),
        }
    }

    /// True for the error classes the CLI maps to the protocol exit code.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            Error::Protocol { .. } | Error::ProtocolOrder { .. } | Error::Wire(_) | Error::Transport(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
