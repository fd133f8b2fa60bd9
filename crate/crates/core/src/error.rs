use thiserror::Error;

use crate::ossh::LedgerKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("image {image} has no proposals")]
    NoProposals { image: String },

    #[error("proposal {proposal} of image {image} has no score for class {class:?}")]
    MissingScore {
        image: String,
        proposal: u32,
        class: String,
    },

    #[error("score {score} for {context} is outside [0, 1]")]
    ScoreOutOfRange { score: f64, context: String },

    #[error("duplicate proposal id {proposal} in image {image}")]
    DuplicateProposal { image: String, proposal: u32 },

    #[error("missing ledger entry {0}")]
    MissingLedgerEntry(LedgerKey),

    #[error("duplicate ledger entry {0}")]
    DuplicateLedgerEntry(LedgerKey),

    #[error("proposal {proposal} is not in the candidate pool of image {image}")]
    NotInPool { image: String, proposal: u32 },

    #[error("unknown image {0}")]
    UnknownImage(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Io(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
