use thiserror::Error;

/// Errors produced by the estimation and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("absent level {level} in labels with m = {m}")]
    AbsentLevel { level: usize, m: usize },
    #[error("singular design matrix (rank {rank} < {cols} columns)")]
    SingularDesign { rank: usize, cols: usize },
    #[error("coordinate descent did not converge after {sweeps} sweeps (kkt residual {kkt:.3e})")]
    NonConvergence { sweeps: usize, kkt: f64 },
    #[error("degenerate environment group: {0}")]
    DegenerateGroup(String),
    #[error("subset enumeration budget exceeded ({subsets} > {budget}); reduce screen_k or max_subset_size")]
    EnumerationBudget { subsets: u128, budget: u128 },
    #[error("learner failure: {0}")]
    Learner(String),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
