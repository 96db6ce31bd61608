use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for {len} users")]
    Index { index: usize, len: usize },

    #[error("receiver filter for user {0} is orthogonal to its channel estimate statistics")]
    DegenerateFilter(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input")]
    Empty,

    #[error("{failed} of {total} realizations did not converge (limit {limit})")]
    TooManyUnconverged {
        failed: usize,
        total: usize,
        limit: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
