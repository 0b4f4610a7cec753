//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration (widths, weights, identifiers, schedules).
    #[error("configuration error: {0}")]
    Config(String),

    /// Runtime input with the wrong shape, domain or value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Action outside the domain of the active action cost.
    #[error("action domain error: {0}")]
    ActionDomain(String),

    /// Checkpoint or grid file could not be read back.
    #[error("file format error: {0}")]
    Format(String),

    /// Training loss became non-finite or exceeded the divergence threshold.
    #[error("training diverged at epoch {epoch}: mean |residual| = {mean_abs_residual}")]
    TrainingDiverged { epoch: usize, mean_abs_residual: f64 },

    /// Non-finite quantity produced while training (offending state reported).
    #[error("training fault at x = {state:?}: {what}")]
    TrainingFault { state: Vec<f64>, what: String },

    /// Non-finite state produced while simulating.
    #[error("simulation fault at t = {t}: {what}")]
    SimulationFault { t: f64, what: String },

    /// No stabilizing initial gain exists for the requested Riccati problem.
    #[error("Riccati infeasibility: {0}")]
    Infeasible(String),

    /// An iterative solver stalled before reaching its tolerance.
    #[error("convergence failure: {what} (residual {residual})")]
    Convergence { what: String, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 divergence, 4 convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Format(_) | Error::Io(_) => 2,
            Error::TrainingDiverged { .. } | Error::TrainingFault { .. } => 3,
            Error::Convergence { .. } | Error::Infeasible(_) => 4,
            _ => 1,
        }
    }
}
