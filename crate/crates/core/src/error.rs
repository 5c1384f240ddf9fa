use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, XnetError>;

#[derive(Debug, Error)]
pub enum XnetError {
    #[error("invalid input dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("malformed preorder encoding: {0}")]
    MalformedEncoding(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("R² is undefined: target values have zero variance")]
    UndefinedR2,

    #[error("node output cache is stale; run a forward pass before computing gradients")]
    StaleCache,

    #[error("mutation rejected: resulting depth {depth} exceeds the limit of {max}")]
    DepthExceeded { depth: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("no usable rows in {0}")]
    NoUsableRows(String),

    #[error("split fraction {fraction} leaves an empty partition for {rows} rows")]
    EmptySplit { fraction: f64, rows: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
