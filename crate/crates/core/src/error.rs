use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid Kripke model: {0}")]
    Model(String),
    #[error("proposition `{prop}` has no value at world {world}")]
    UnknownProposition { prop: String, world: usize },
    #[error("truth value {value} for `{prop}` at world {world} is outside [0, 1]")]
    TruthOutOfRange {
        prop: String,
        world: usize,
        value: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {component} at epoch {epoch}")]
    NonFinite { component: String, epoch: usize },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
