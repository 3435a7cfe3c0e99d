use thiserror::Error;

/// Errors produced by the timing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature tail mass {tail:.3e} outside the integration window exceeds tolerance {tol:.1e}")]
    QuadratureTail { tail: f64, tol: f64 },

    #[error("parameters ({tau0}, {tau}, {q}) lie outside the model domain")]
    OutOfDomain { tau0: f64, tau: f64, q: f64 },

    #[error("design matrix is rank deficient (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("insufficient counts: requested {requested} from a record of {available}")]
    InsufficientCounts { requested: u64, available: u64 },

    #[error("quantum Fisher information not converged in the mode truncation (relative change {0:.3e})")]
    TruncationNotConverged(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("probe point rejected: {0}")]
    ProbeRejected(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
