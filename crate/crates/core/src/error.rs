use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("not a permutation: {0}")]
    NotPermutation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("non-finite value in `{variable}` at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        variable: &'static str,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
