use thiserror::Error;

use crate::maml::ConvergenceRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A gain does not stabilize a task (spectral radius at or above the margin).
    #[error("unstable closed loop{}: spectral radius {rho:.6}", task_label(*.task))]
    Stability { task: Option<usize>, rho: f64 },

    #[error("numerical failure: {0}")]
    Computation(String),

    /// A perturbed gain queried by the two-point estimator left the stabilizing set.
    #[error("zeroth-order sample {sample} destabilized the task (spectral radius {rho:.6}); shrink the smoothing radius")]
    Estimation { sample: usize, rho: f64 },

    #[error("guard stopped the optimization at iteration {iteration}: {reason}")]
    Guard {
        iteration: usize,
        reason: String,
        record: Box<ConvergenceRecord>,
    },

    #[error("task generation failed: {0}")]
    Generation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn task_label(task: Option<usize>) -> String {
    match task {
        Some(i) => format!(" for task {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn with_task(self, i: usize) -> Self {
        match self {
            Error::Stability { task: None, rho } => Error::Stability { task: Some(i), rho },
            other => other,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::InvalidInput(_) | Error::Dimension(_) => 2,
            Error::Stability { .. } | Error::Guard { .. } | Error::Estimation { .. } => 3,
            Error::Computation(_) | Error::Generation(_) => 4,
        }
    }
}
