use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("empty dataset: {0}")]
    Empty(String),

    #[error("formula error: {0}")]
    Formula(String),

    #[error("similarity model: {0}")]
    Similarity(String),

    #[error("perfect separation in membership model: {0}; set a positive penalty")]
    Separation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter vector has non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("quadrature grid too coarse: boundary holds {0:.3e} of the total mass")]
    CoarseGrid(f64),

    #[error("design prior starvation: {0}")]
    Starvation(String),

    #[error("no threshold meets the type-I budget {budget}; best is nu={best_nu} with rate {best_rate}")]
    Infeasible {
        budget: f64,
        best_nu: f64,
        best_rate: f64,
    },

    #[error("target power {target} not reached on the grid; maximum achieved {max_power}")]
    Unreachable { target: f64, max_power: f64 },

    #[error("{excluded} of {total} replicates did not converge")]
    Convergence { excluded: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
