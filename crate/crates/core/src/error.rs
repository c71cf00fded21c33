use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),

    #[error("ill-posed receiver: R'R is singular")]
    IllPosedReceiver,

    #[error("no strictly feasible point: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {steps} Newton steps (decrement {decrement:.3e})")]
    NonConvergence { steps: usize, decrement: f64 },

    #[error("unsupported policy: {0}")]
    UnsupportedPolicy(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
