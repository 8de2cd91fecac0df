//! Error taxonomy shared across the crate.
//!
//! Variants map onto the CLI exit codes: configuration problems exit 1,
//! numerical failures exit 2, and a missing endemic equilibrium exits 3.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SimError {
    /// Malformed or inconsistent configuration / input files / usage.
    #[error("config error: {0}")]
    Config(String),

    /// A solver failed to converge or produced an invalid intermediate value.
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// Equilibrium search terminated on the disease-free branch
    /// (expected when p = 1 and R0 <= 1).
    #[error("no endemic equilibrium found: {0}")]
    NoEndemicEquilibrium(String),

    /// Operation invoked outside its parameter regime
    /// (e.g. a limit profile requested for the wrong sign of N - ∫r^{1/q}).
    #[error("regime error: {0}")]
    Regime(String),

    /// Filesystem problems while reading inputs or writing outputs.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    /// Process exit code for the CLI. 0 is success and never produced here.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Regime(_) | SimError::Io { .. } => 1,
            SimError::Numerics(_) => 2,
            SimError::NoEndemicEquilibrium(_) => 3,
        }
    }

    /// Shorthand constructor for config errors.
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    /// Shorthand constructor for numerical failures.
    pub fn numerics(msg: impl Into<String>) -> Self {
        SimError::Numerics(msg.into())
    }

    /// Shorthand constructor for io errors.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;
