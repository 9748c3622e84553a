use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("column `{name}` has {len} rows, expected {expected}")]
    Ragged {
        name: String,
        len: usize,
        expected: usize,
    },

    #[error("every selected column is either fully observed or fully missing; no indicators remain")]
    EmptyIndicators,

    #[error("indicator `{0}` has zero variance")]
    DegenerateColumn(String),

    #[error("tetrachoric estimation failed for pair ({0}, {1})")]
    PairEstimation(usize, usize),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("both outcome classes must be present ({0})")]
    SingleClass(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
