use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input does not match the documented file schema (missing columns, bad header).
    #[error("schema error: {0}")]
    Schema(String),
    /// A specific input row could not be parsed or violates a record invariant.
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    /// A precondition on an operation's arguments was violated.
    #[error("{0}")]
    Invalid(String),
    /// A scale estimate came out zero, so the transform is undefined.
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("linear algebra failure: {0}")]
    LinAlg(String),
    #[error("optimizer did not converge after {iters} iterations (best objective {best})")]
    NoConvergence { iters: usize, best: f64 },
    #[error("chain {chain} aborted at iteration {iteration}: {msg}")]
    ChainAbort {
        chain: usize,
        iteration: usize,
        msg: String,
    },
    /// A convergence diagnostic is undefined for the given draws (e.g. constant chains).
    #[error("diagnostic undefined: {0}")]
    DegenerateDiagnostic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
