use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Malformed input: non-finite entries, wrong dimensions, bad shapes.
    #[error("input error: {0}")]
    Input(String),
    /// Argument outside the set where the requested quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Parameters violate a structural requirement (band, supercriticality, grid size).
    #[error("configuration error: {0}")]
    Config(String),
    /// A certified numerical property failed to hold.
    #[error("internal error: {0}")]
    Internal(String),
    /// The ODE integrator could not advance.
    #[error("integration failure at t = {t}: {msg} (last state {state})")]
    Integration { msg: String, t: f64, state: f64 },
    /// A regression was rejected.
    #[error("fit error: {0}")]
    Fit(String),
    /// An iterative solver exhausted its budget.
    #[error("convergence failure: {msg}")]
    Convergence { msg: String, history: Vec<f64> },
    /// An operation's documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A sub-barrier was used where a super-barrier is required, or vice versa.
    #[error("kind error: {0}")]
    Kind(String),
}

pub type Result<T> = std::result::Result<T, Error>;
