use thiserror::Error;

/// Crate-wide error type. Numerical preconditions, infeasible designs and
/// data-ingestion failures all surface here; solver non-convergence does
/// not (it is reported through `FittedModel::converged`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric within 1e-10 relative tolerance")]
    NotSymmetric,
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("quantile fraction {0} outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("weighted information matrix X'WX is not positive definite")]
    DegenerateDesign,
    #[error("sample budget n = {n} exceeds what the population admits ({cap})")]
    InfeasibleBudget { n: usize, cap: usize },
    #[error("all influence norms are zero")]
    AllZeroNorms,
    #[error("negative radicand {0:.3e} from inconsistent probability estimates")]
    NegativeRadicand(f64),
    #[error("design mechanism does not match this draw: expected {0}")]
    WrongMechanism(&'static str),
    #[error("budget n = {n} is below the stratum count K = {k}")]
    BudgetBelowStratumCount { n: usize, k: usize },
    #[error("enumeration of {0} samples exceeds the brute-force limit of 1e6")]
    EnumerationTooLarge(u128),
    #[error("{path}:{row}: {msg}")]
    ParseError {
        path: String,
        row: usize,
        msg: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("CSV has neither a `y` nor an `s` column")]
    MissingOutcomeColumns,
    #[error("non-binary outcome `{value}` in column `{column}` at data row {row}")]
    NonBinaryOutcome {
        column: String,
        row: usize,
        value: String,
    },
    #[error("summary cell `{0}` has no rows")]
    EmptyCell(String),
    #[error("no strategies or budgets to plot")]
    NoData,
    #[error("the logistic solver failed on every replicate")]
    AllReplicatesFailed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
