use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Every particle received a non-finite density update at observation `t`.
    #[error("total weight collapse at observation {t}: no particle has finite weight")]
    WeightCollapse { t: usize },

    /// A group's weights sum to zero, so no normalized mean exists.
    #[error("group {group} has zero total weight")]
    EmptyGroup { group: usize },

    /// A contract violation in supplied weights or parameters.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Configuration rejected before any compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// A design record does not match the data/model/config it is replayed against.
    #[error("design mismatch: {0}")]
    DesignMismatch(String),

    /// Malformed serialized artifact (design record, snapshot, or report).
    #[error("format error: {0}")]
    Format(String),

    /// Data ingestion failure.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 1 usage/config, 2 data/format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 1,
            Error::Data(_) | Error::Format(_) | Error::DesignMismatch(_) | Error::Io(_) => 2,
            Error::WeightCollapse { .. } | Error::EmptyGroup { .. } => 3,
        }
    }
}
