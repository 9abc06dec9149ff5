use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inconsistent shapes supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed input data (CSV parsing, non-finite cells, ...).
    #[error("ingestion error: {0}")]
    Ingestion(String),
    /// An estimator could not produce a value from the given data.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Degenerate output distribution (e.g. constant responses, P = 0).
    #[error("degenerate output: {0}")]
    Degenerate(String),
    /// A structural invariant that should hold by construction was violated.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
