use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {block} out of range (image has {total} blocks)")]
    OutOfRange { block: u64, total: u64 },

    #[error("unrecognized image: {0}")]
    UnrecognizedImage(String),

    #[error("image spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("no eligible target for {0}")]
    NoEligibleTarget(String),

    #[error("parent record for directory {0} requested before its entries were scanned")]
    MissingParentRecord(u64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what} line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
