use thiserror::Error;

use crate::tensor::{Dims, TensorError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: Dims,
        actual: Dims,
    },
    #[error("invalid group count {groups} for a scan axis of length {len}")]
    InvalidGroups { groups: usize, len: usize },
    #[error("oracle refuses a {pixels}-pixel grid (limit {limit})")]
    ScaleGuard { pixels: usize, limit: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dims(what: &'static str, expected: Dims, actual: Dims) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            actual,
        })
    }
}
