use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite coordinate in {what}")]
    Domain { what: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String, last_state: Vec<f64> },

    #[error("energy drift {drift:e} exceeds tolerance {tol:e}")]
    EnergyDrift { drift: f64, tol: f64 },

    #[error("grid under-resolved: dx = {dx} > {max_dx}; need at least {required_points} points per axis")]
    UnderResolved { dx: f64, max_dx: f64, required_points: usize },

    #[error("symbol not decaying inside 80% of the momentum band (|q| = {value:e} at |ξ| = {at})")]
    Aliasing { value: f64, at: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("factorization failed (z may be an eigenvalue): {0}")]
    Singular(String),

    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),

    #[error("limiting absorption failed: {0}")]
    LimitingAbsorption(String),
}

impl Error {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
