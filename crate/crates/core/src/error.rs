use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pool index {index} out of range for {pools} pools")]
    PoolIndex { index: usize, pools: usize },

    #[error("individual E-step needs singleton pools, but pool {pool} has {size} members")]
    NotIndividualTesting { pool: usize, size: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("selected model is empty")]
    EmptyModel,

    #[error("contrast vector must be non-zero with one entry per selected coefficient")]
    InvalidContrast,

    #[error("observed contrast {observed} lies outside the truncation region [{lower}, {upper}]")]
    InconsistentEvent { observed: f64, lower: f64, upper: f64 },

    #[error("truncated normal mass underflowed on [{lower}, {upper}]")]
    TailDegeneracy { lower: f64, upper: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that come from the data or the numerics rather
    /// than from the caller (used to pick exit codes and failure tallies).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDesign(_)
                | Error::InconsistentEvent { .. }
                | Error::TailDegeneracy { .. }
                | Error::NotConverged { .. }
                | Error::Numerical(_)
        )
    }
}
