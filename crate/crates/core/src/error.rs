use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value or dimension is out of its valid domain.
    #[error("configuration error: {0}")]
    Config(String),
    /// Experiment setup could not complete (e.g. the initial-state sampler gave up).
    #[error("setup error: {0}")]
    Setup(String),
    /// Non-finite or malformed data passed to the QP solver.
    #[error("solver input error: {0}")]
    SolverInput(String),
    /// The QP solver did not terminate. Indicates a bug.
    #[error("internal solver failure: {0}")]
    Solver(String),
    /// Invalid argument to a statistics routine.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
